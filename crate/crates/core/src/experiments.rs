//! Convergence studies: law-of-large-numbers decay at fixed mesh, the joint
//! mesh/population limit, mesh refinement against a fine reference, and decay
//! of the compensated martingale. Replicas run in parallel and are merged in
//! replica order, so results are independent of the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::l1_norm;
use crate::patch::{
    default_rk4_dt, integrate_rk4, IntegrateOpts, PatchState, Trajectory,
};
use crate::reference::{discretization_study, restrict_state, solve_reference_fine_on, FineIntegrator, StudyTable};
use crate::rng::{replica_rng, replica_seed};
use crate::scenario::Scenario;
use crate::ssa::{compensated_martingale, simulate, uniform_sample_times, InitMode, SimOutput};

/// `sum_j |u_j|` over all three compartments; the norm the stochastic
/// convergence studies are measured in.
pub fn l1_triple(state: &PatchState) -> f64 {
    l1_norm(state.s.values()) + l1_norm(state.i.values()) + l1_norm(state.r.values())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LlnRow {
    pub n_scale: u64,
    pub mean_sup_err: f64,
    pub stderr: f64,
    pub replicas: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LlnReport {
    pub rows: Vec<LlnRow>,
    /// Least-squares slope of `ln(mean error)` against `ln N`.
    pub slope: f64,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    cov / var
}

fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Run `replicas` independent stochastic replicas in parallel and map each
/// output through `f`, preserving replica order. Seeds are derived from
/// `base_seed` and the global replica index `offset + k`.
#[allow(clippy::too_many_arguments)]
fn run_replicas<T: Send, F>(
    scenario: &Scenario,
    n_scale: u64,
    sample_times: &[f64],
    base_seed: u64,
    offset: u64,
    replicas: usize,
    f: F,
) -> Result<Vec<T>>
where
    F: Fn(&SimOutput) -> Result<T> + Sync,
{
    let grid = scenario.grid()?;
    (0..replicas)
        .into_par_iter()
        .map(|k| {
            let index = offset + k as u64;
            let mut rng = replica_rng(base_seed, index);
            let out = simulate(
                n_scale,
                &scenario.params,
                grid,
                &scenario.s0,
                &scenario.i0,
                &scenario.r0,
                scenario.t_final,
                sample_times,
                InitMode::Multinomial,
                &mut rng,
            )
            .and_then(|out| f(&out));
            out.map_err(|e| Error::Replica {
                replica: index as usize,
                seed: replica_seed(base_seed, index),
                source: Box::new(e),
            })
        })
        .collect()
}

fn patch_trajectory(scenario: &Scenario, sample_times: &[f64]) -> Result<Trajectory> {
    let grid = scenario.grid()?;
    let x0 = PatchState::project(grid, &scenario.s0, &scenario.i0, &scenario.r0);
    let dt = default_rk4_dt(grid, &scenario.params);
    integrate_rk4(
        &scenario.params,
        &x0,
        scenario.t_final,
        dt,
        IntegrateOpts { n_samples: sample_times.len() - 1, override_stability: false },
    )
}

/// Fixed-mesh law of large numbers: sup over sample times of the `l1`
/// distance between the renormalized stochastic state and the patch solution,
/// averaged over replicas, for each population scale.
pub fn run_fixed_eps_lln(
    scenario: &Scenario,
    n_list: &[u64],
    replicas: usize,
    base_seed: u64,
) -> Result<LlnReport> {
    if n_list.is_empty() || replicas == 0 {
        return Err(Error::InvalidPlan("need at least one N and one replica".into()));
    }
    let sample_times = uniform_sample_times(scenario.t_final, scenario.n_samples);
    let patch = patch_trajectory(scenario, &sample_times)?;
    let mut rows = Vec::with_capacity(n_list.len());
    for (idx, &n_scale) in n_list.iter().enumerate() {
        let sup_errs = run_replicas(
            scenario,
            n_scale,
            &sample_times,
            base_seed,
            (idx * replicas) as u64,
            replicas,
            |out| {
                let mut sup = 0.0f64;
                for (z, x) in out.states.iter().zip(&patch.states) {
                    sup = sup.max(l1_triple(&z.sub(x)?));
                }
                Ok(sup)
            },
        )?;
        let (mean_sup_err, stderr) = mean_stderr(&sup_errs);
        rows.push(LlnRow { n_scale, mean_sup_err, stderr, replicas });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.n_scale as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.mean_sup_err).collect();
    let slope = if rows.len() >= 2 { log_log_slope(&xs, &ys) } else { f64::NAN };
    Ok(LlnReport { rows, slope })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScheduleStep {
    pub inv_eps: usize,
    pub n_scale: u64,
}

/// A joint-limit schedule is admissible when the mesh strictly refines and
/// `N / log(1/eps)` strictly increases along it.
pub fn validate_schedule(schedule: &[ScheduleStep]) -> Result<()> {
    if schedule.len() < 2 {
        return Err(Error::InvalidPlan("schedule needs at least two steps".into()));
    }
    for w in schedule.windows(2) {
        if w[1].inv_eps <= w[0].inv_eps {
            return Err(Error::InvalidPlan(format!(
                "mesh must strictly refine: 1/{} then 1/{}",
                w[0].inv_eps, w[1].inv_eps
            )));
        }
        let ratio = |s: &ScheduleStep| s.n_scale as f64 / (s.inv_eps as f64).ln();
        if ratio(&w[1]) <= ratio(&w[0]) {
            return Err(Error::InvalidPlan(format!(
                "N / log(1/eps) must strictly increase: {:.3} then {:.3}",
                ratio(&w[0]),
                ratio(&w[1])
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SupnormRow {
    pub inv_eps: usize,
    pub n_scale: u64,
    pub mean_sup_err: f64,
    pub stderr: f64,
    pub replicas: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SupnormReport {
    pub rows: Vec<SupnormRow>,
    pub inv_eps_ref: usize,
}

/// Joint mesh/population limit: along an admissible schedule, compare the
/// renormalized stochastic state against a fine-mesh reference solution
/// restricted to each mesh, in the sup norm, sup over sample times.
pub fn run_joint_supnorm_lln(
    scenario: &Scenario,
    schedule: &[ScheduleStep],
    inv_eps_ref: usize,
    replicas: usize,
    base_seed: u64,
) -> Result<SupnormReport> {
    validate_schedule(schedule)?;
    if replicas == 0 {
        return Err(Error::InvalidPlan("need at least one replica".into()));
    }
    for step in schedule {
        if inv_eps_ref % step.inv_eps != 0 {
            return Err(Error::NotNested(format!(
                "schedule mesh 1/{} does not nest in reference 1/{inv_eps_ref}",
                step.inv_eps
            )));
        }
    }
    let ref_grid = crate::grid::build_grid(scenario.d, inv_eps_ref, scenario.boundary)?;
    let sample_times = uniform_sample_times(scenario.t_final, scenario.n_samples);
    let reference = solve_reference_fine_on(
        &scenario.params,
        ref_grid,
        &scenario.s0,
        &scenario.i0,
        &scenario.r0,
        scenario.t_final,
        crate::patch::DEFAULT_EXP_DT,
        scenario.n_samples,
        FineIntegrator::Exponential,
    )?;
    let mut rows = Vec::with_capacity(schedule.len());
    for (idx, step) in schedule.iter().enumerate() {
        let mut sc = scenario.clone();
        sc.inv_eps = step.inv_eps;
        let grid = sc.grid()?;
        let restricted: Vec<PatchState> = reference
            .trajectory
            .states
            .iter()
            .map(|s| restrict_state(s, grid))
            .collect::<Result<_>>()?;
        let sup_errs = run_replicas(
            &sc,
            step.n_scale,
            &sample_times,
            base_seed,
            (idx * replicas) as u64,
            replicas,
            |out| {
                let mut sup = 0.0f64;
                for (z, x) in out.states.iter().zip(&restricted) {
                    sup = sup.max(z.sub(x)?.sup_norm_triple());
                }
                Ok(sup)
            },
        )?;
        let (mean_sup_err, stderr) = mean_stderr(&sup_errs);
        rows.push(SupnormRow {
            inv_eps: step.inv_eps,
            n_scale: step.n_scale,
            mean_sup_err,
            stderr,
            replicas,
        });
    }
    Ok(SupnormReport { rows, inv_eps_ref })
}

/// Mesh-refinement study of the deterministic patch solutions against the
/// fine-mesh reference; reuses the scenario's model and initial data.
pub fn run_discretization_study(
    scenario: &Scenario,
    inv_eps_list: &[usize],
    inv_eps_ref: usize,
) -> Result<StudyTable> {
    discretization_study(
        &scenario.params,
        scenario.d,
        &scenario.s0,
        &scenario.i0,
        &scenario.r0,
        scenario.t_final,
        inv_eps_list,
        inv_eps_ref,
        scenario.n_samples,
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MartingalePointwise {
    pub time: f64,
    /// Mean over replicas of the spatially summed martingale, per compartment.
    pub mean: [f64; 3],
    pub stderr: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MartingaleReport {
    pub rows: Vec<LlnRow>,
    pub slope: f64,
    /// Pointwise statistics at the largest population scale, on a thinned
    /// time grid.
    pub pointwise: Vec<MartingalePointwise>,
}

const MARTINGALE_SAMPLES: usize = 256;
const POINTWISE_STRIDE: usize = 16;

/// Decay of the compensated martingale `M(t) = Z(t) - Z(0) - \int b(Z) dr`:
/// mean over replicas of `sup_t ||M(t)||_1` per population scale, plus a
/// pointwise zero-mean check at the largest scale.
pub fn run_martingale_decay(
    scenario: &Scenario,
    n_list: &[u64],
    replicas: usize,
    base_seed: u64,
) -> Result<MartingaleReport> {
    if n_list.is_empty() || replicas < 2 {
        return Err(Error::InvalidPlan("need at least one N and two replicas".into()));
    }
    let n_samples = scenario.n_samples.max(MARTINGALE_SAMPLES);
    let sample_times = uniform_sample_times(scenario.t_final, n_samples);
    let mut rows = Vec::with_capacity(n_list.len());
    let mut pointwise = Vec::new();
    for (idx, &n_scale) in n_list.iter().enumerate() {
        // per replica: sup_t l1 norm plus the spatially summed signed series
        let results = run_replicas(
            scenario,
            n_scale,
            &sample_times,
            base_seed,
            (idx * replicas) as u64,
            replicas,
            |out| {
                let mart = compensated_martingale(out, &scenario.params)?;
                let sup = mart.iter().map(l1_triple).fold(0.0, f64::max);
                let sums: Vec<[f64; 3]> = mart
                    .iter()
                    .map(|m| {
                        [
                            m.s.values().iter().sum::<f64>(),
                            m.i.values().iter().sum::<f64>(),
                            m.r.values().iter().sum::<f64>(),
                        ]
                    })
                    .collect();
                Ok((sup, sums))
            },
        )?;
        let sup_errs: Vec<f64> = results.iter().map(|(s, _)| *s).collect();
        let (mean_sup_err, stderr) = mean_stderr(&sup_errs);
        rows.push(LlnRow { n_scale, mean_sup_err, stderr, replicas });
        if idx == n_list.len() - 1 {
            for (k, &time) in sample_times.iter().enumerate().step_by(POINTWISE_STRIDE) {
                let mut mean = [0.0; 3];
                let mut err = [0.0; 3];
                for c in 0..3 {
                    let series: Vec<f64> = results.iter().map(|(_, sums)| sums[k][c]).collect();
                    let (m, e) = mean_stderr(&series);
                    mean[c] = m;
                    err[c] = e;
                }
                pointwise.push(MartingalePointwise { time, mean, stderr: err });
            }
        }
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.n_scale as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.mean_sup_err).collect();
    let slope = if rows.len() >= 2 { log_log_slope(&xs, &ys) } else { f64::NAN };
    Ok(MartingaleReport { rows, slope, pointwise })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::baseline_scenario;
    use proptest::prelude::*;

    fn small_scenario() -> Scenario {
        let mut sc = baseline_scenario(1, 4);
        sc.t_final = 0.5;
        sc.n_samples = 16;
        sc.normalize().unwrap();
        sc
    }

    #[test]
    fn slope_recovers_power_law() {
        let xs = [100.0, 1000.0, 10000.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-0.5)).collect();
        assert!((log_log_slope(&xs, &ys) + 0.5).abs() <= 1e-12);
    }

    #[test]
    fn lln_error_decreases_with_population() {
        let sc = small_scenario();
        let report = run_fixed_eps_lln(&sc, &[100, 10_000], 12, 7).unwrap();
        assert!(report.rows[1].mean_sup_err < report.rows[0].mean_sup_err, "{report:?}");
        assert!(report.slope < -0.2, "slope {}", report.slope);
    }

    #[test]
    fn lln_is_deterministic_across_thread_counts() {
        let sc = small_scenario();
        let a = run_fixed_eps_lln(&sc, &[200], 8, 3).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| run_fixed_eps_lln(&sc, &[200], 8, 3)).unwrap();
        assert_eq!(a.rows[0].mean_sup_err.to_bits(), b.rows[0].mean_sup_err.to_bits());
    }

    #[test]
    fn schedule_validation_rejects_bad_schedules() {
        let ok = [
            ScheduleStep { inv_eps: 4, n_scale: 200 },
            ScheduleStep { inv_eps: 8, n_scale: 800 },
        ];
        validate_schedule(&ok).unwrap();
        let coarsening = [
            ScheduleStep { inv_eps: 8, n_scale: 200 },
            ScheduleStep { inv_eps: 4, n_scale: 800 },
        ];
        assert!(validate_schedule(&coarsening).is_err());
        let stagnant_n = [
            ScheduleStep { inv_eps: 4, n_scale: 800 },
            ScheduleStep { inv_eps: 16, n_scale: 800 },
        ];
        assert!(validate_schedule(&stagnant_n).is_err());
    }

    proptest! {
        #[test]
        fn admissible_schedules_always_validate(
            start_log2 in 2usize..5,
            growth in 2u64..6,
            n0 in 100u64..1000,
            len in 2usize..5,
        ) {
            // doubling the mesh while multiplying N by >= 2 keeps
            // N / log(1/eps) strictly increasing
            let schedule: Vec<ScheduleStep> = (0..len)
                .map(|k| ScheduleStep {
                    inv_eps: 1 << (start_log2 + k),
                    n_scale: n0 * growth.pow(k as u32),
                })
                .collect();
            prop_assert!(validate_schedule(&schedule).is_ok());
        }
    }

    #[test]
    fn martingale_mean_is_near_zero() {
        let sc = small_scenario();
        let report = run_martingale_decay(&sc, &[200, 2000], 16, 11).unwrap();
        assert!(report.rows[1].mean_sup_err < report.rows[0].mean_sup_err);
        for p in &report.pointwise {
            for c in 0..3 {
                let tol = 4.0 * p.stderr[c] + 1e-12;
                assert!(p.mean[c].abs() <= tol, "t={} c={c} mean={} stderr={}", p.time, p.mean[c], p.stderr[c]);
            }
        }
    }

    #[test]
    fn supnorm_study_runs_and_decreases() {
        let mut sc = small_scenario();
        sc.t_final = 0.5;
        let schedule = [
            ScheduleStep { inv_eps: 4, n_scale: 400 },
            ScheduleStep { inv_eps: 8, n_scale: 3200 },
        ];
        let report = run_joint_supnorm_lln(&sc, &schedule, 32, 8, 5).unwrap();
        assert!(report.rows[1].mean_sup_err < report.rows[0].mean_sup_err, "{report:?}");
    }
}
