//! Reference solutions of the limiting reaction-diffusion system by two
//! independent routes — fine-mesh patch integration and spectral Picard
//! iteration on the mild form — plus the mesh-refinement study that compares
//! coarse patch solutions against a restricted reference.

use crate::error::{Error, Result};
use crate::grid::{build_grid, Field, GridSpec};
use crate::patch::{
    default_rk4_dt, integrate_exponential, integrate_rk4, reaction_g, IntegrateOpts, LawsonScheme,
    ModelParams, PatchState, SpatialFn, Trajectory, DEFAULT_EXP_DT,
};
use crate::spectral::{basis_1d, semigroup_apply_continuous, CoeffTensor};

/// Which integrator produces the fine-mesh reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FineIntegrator {
    /// Exponential Lawson-Heun stepping; no diffusion CFL restriction.
    Exponential,
    Rk4,
}

/// A reference trajectory together with how it was produced.
#[derive(Debug, Clone)]
pub enum ReferenceRoute {
    FineMesh { inv_eps_ref: usize, dt: f64 },
    SpectralPicard { m_max: usize, iterations: usize, residuals: Vec<f64> },
}

#[derive(Debug, Clone)]
pub struct ReferenceSolution {
    pub route: ReferenceRoute,
    /// Trajectory on the reference grid (fine mesh) or materialized from
    /// coefficients (spectral route).
    pub trajectory: Trajectory,
}

/// Cell-aggregation restriction: each coarse value is the mean of the
/// `ratio^d` fine cells it contains. Exact for nested meshes.
pub fn restrict_field(fine: &Field, coarse: GridSpec) -> Result<Field> {
    let fg = fine.grid();
    if fg.d() != coarse.d() || fg.boundary() != coarse.boundary() {
        return Err(Error::NotNested("dimension or boundary mismatch".into()));
    }
    if fg.inv_eps() % coarse.inv_eps() != 0 {
        return Err(Error::NotNested(format!(
            "1/eps {} is not a multiple of 1/eps {}",
            fg.inv_eps(),
            coarse.inv_eps()
        )));
    }
    let ratio = fg.inv_eps() / coarse.inv_eps();
    let d = fg.d();
    let cells = (ratio as u64).pow(d as u32) as f64;
    let mut values = vec![0.0; coarse.n_sites()];
    for fine_site in 0..fg.n_sites() {
        let fm = fg.unflatten(fine_site);
        let mut cm = [0usize; crate::grid::MAX_D];
        for j in 0..d {
            cm[j] = fm[j] / ratio;
        }
        values[coarse.flatten(&cm[..d])] += fine.values()[fine_site];
    }
    for v in values.iter_mut() {
        *v /= cells;
    }
    Field::new(coarse, values)
}

pub fn restrict_state(fine: &PatchState, coarse: GridSpec) -> Result<PatchState> {
    PatchState::new(
        restrict_field(&fine.s, coarse)?,
        restrict_field(&fine.i, coarse)?,
        restrict_field(&fine.r, coarse)?,
    )
}

/// Fine-mesh reference: project the continuous data onto the reference grid
/// and integrate the patch system there.
#[allow(clippy::too_many_arguments)]
pub fn solve_reference_fine(
    params: &ModelParams,
    s0: &SpatialFn,
    i0: &SpatialFn,
    r0: &SpatialFn,
    t_final: f64,
    inv_eps_ref: usize,
    dt: f64,
    n_samples: usize,
    integrator: FineIntegrator,
) -> Result<ReferenceSolution> {
    let grid = build_grid(1.max(infer_dim(s0, i0, r0)), inv_eps_ref, crate::grid::Boundary::Neumann)?;
    solve_reference_fine_on(params, grid, s0, i0, r0, t_final, dt, n_samples, integrator)
}

fn infer_dim(s0: &SpatialFn, i0: &SpatialFn, r0: &SpatialFn) -> usize {
    for f in [s0, i0, r0] {
        match f {
            SpatialFn::GaussianBump { center, .. } => return center.len(),
            SpatialFn::Raster { grid, .. } => return grid.d(),
            SpatialFn::Constant { .. } => {}
        }
    }
    1
}

#[allow(clippy::too_many_arguments)]
pub fn solve_reference_fine_on(
    params: &ModelParams,
    grid: GridSpec,
    s0: &SpatialFn,
    i0: &SpatialFn,
    r0: &SpatialFn,
    t_final: f64,
    dt: f64,
    n_samples: usize,
    integrator: FineIntegrator,
) -> Result<ReferenceSolution> {
    let x0 = PatchState::project(grid, s0, i0, r0);
    let opts = IntegrateOpts { n_samples, override_stability: false };
    let trajectory = match integrator {
        FineIntegrator::Exponential => {
            integrate_exponential(params, &x0, t_final, dt, LawsonScheme::Heun, opts)?
        }
        FineIntegrator::Rk4 => integrate_rk4(params, &x0, t_final, dt, opts)?,
    };
    Ok(ReferenceSolution {
        route: ReferenceRoute::FineMesh { inv_eps_ref: grid.inv_eps(), dt },
        trajectory,
    })
}

/// Coefficients of `phi` in the truncated cosine basis, by midpoint
/// collocation with `q` points per axis (discrete orthogonality makes this
/// exact for band-limited functions).
pub fn project_coefficients(phi: &SpatialFn, d: usize, m_max: usize, q: usize) -> CoeffTensor {
    let mut out = CoeffTensor::zeros(d, m_max);
    let n_points = q.pow(d as u32);
    let h = 1.0 / q as f64;
    for flat in 0..out.coeffs.len() {
        let m = out.mode_of(flat);
        let mut acc = 0.0;
        for p in 0..n_points {
            let mut rest = p;
            let mut x = [0.0f64; crate::grid::MAX_D];
            let mut w = 1.0;
            for j in 0..d {
                let idx = rest % q;
                rest /= q;
                x[j] = (idx as f64 + 0.5) * h;
                w *= basis_1d(m[j], x[j]);
            }
            acc += w * phi.eval(&x[..d]);
        }
        out.coeffs[flat] = acc / n_points as f64;
    }
    out
}

/// Exact cell averages of the function represented by `coeffs`, as a field.
pub fn coeff_to_field(coeffs: &CoeffTensor, grid: GridSpec) -> Result<Field> {
    if coeffs.d != grid.d() {
        return Err(Error::GridMismatch("coefficient tensor dimension".into()));
    }
    let d = grid.d();
    let eps = grid.eps();
    let n1 = grid.inv_eps();
    // Per-axis table: mean of basis_1d(m, .) over cell a.
    let mut table = vec![0.0; (coeffs.m_max + 1) * n1];
    for m in 0..=coeffs.m_max {
        for a in 0..n1 {
            let lo = a as f64 * eps;
            let hi = (a + 1) as f64 * eps;
            table[m * n1 + a] = if m == 0 {
                1.0
            } else {
                let k = m as f64 * std::f64::consts::PI;
                std::f64::consts::SQRT_2 * ((k * hi).sin() - (k * lo).sin()) / (k * eps)
            };
        }
    }
    let mut values = vec![0.0; grid.n_sites()];
    for site in 0..grid.n_sites() {
        let cell = grid.unflatten(site);
        let mut acc = 0.0;
        for flat in 0..coeffs.coeffs.len() {
            let c = coeffs.coeffs[flat];
            if c == 0.0 {
                continue;
            }
            let m = coeffs.mode_of(flat);
            let mut w = 1.0;
            for j in 0..d {
                w *= table[m[j] * n1 + cell[j]];
            }
            acc += c * w;
        }
        values[site] = acc;
    }
    Field::new(grid, values)
}

/// One SIR state in the truncated coefficient representation.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffState {
    pub s: CoeffTensor,
    pub i: CoeffTensor,
    pub r: CoeffTensor,
}

impl CoeffState {
    fn flow(&self, params: &ModelParams, t: f64) -> Result<CoeffState> {
        Ok(CoeffState {
            s: semigroup_apply_continuous(&self.s, t, params.mu_s)?,
            i: semigroup_apply_continuous(&self.i, t, params.mu_i)?,
            r: semigroup_apply_continuous(&self.r, t, params.mu_r)?,
        })
    }

    fn add_scaled(&mut self, a: f64, other: &CoeffState) {
        for (dst, src) in [
            (&mut self.s, &other.s),
            (&mut self.i, &other.i),
            (&mut self.r, &other.r),
        ] {
            for (x, y) in dst.coeffs.iter_mut().zip(&src.coeffs) {
                *x += a * y;
            }
        }
    }

    fn diff_norm(&self, other: &CoeffState) -> f64 {
        let mut acc = 0.0;
        for (a, b) in [
            (&self.s, &other.s),
            (&self.i, &other.i),
            (&self.r, &other.r),
        ] {
            acc += a
                .coeffs
                .iter()
                .zip(&b.coeffs)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>();
        }
        acc.sqrt()
    }
}

/// Spectral Picard solution of the mild form on a uniform time grid.
///
/// Requires constant-in-space rates: the reaction is evaluated pointwise on a
/// midpoint collocation grid and projected back, and spatially varying
/// coefficients would mix modes beyond what this route is meant to cover.
#[allow(clippy::too_many_arguments)]
pub fn solve_reference_spectral(
    params: &ModelParams,
    s0: &SpatialFn,
    i0: &SpatialFn,
    r0: &SpatialFn,
    t_final: f64,
    d: usize,
    m_max: usize,
    picard_iters: usize,
    time_points: usize,
    output_grid: GridSpec,
) -> Result<ReferenceSolution> {
    if !params.beta.is_constant() || !params.alpha.is_constant() {
        return Err(Error::InvalidArgument(
            "the spectral route requires constant beta and alpha; use the fine-mesh route".into(),
        ));
    }
    if m_max < 1 || picard_iters < 1 || time_points < 2 {
        return Err(Error::InvalidArgument(
            "need m_max >= 1, picard_iters >= 1, time_points >= 2".into(),
        ));
    }
    let beta = params.beta.sup();
    let alpha = params.alpha.sup();
    let q = (4 * (m_max + 1)).max(64);
    let u0 = CoeffState {
        s: project_coefficients(s0, d, m_max, q),
        i: project_coefficients(i0, d, m_max, q),
        r: project_coefficients(r0, d, m_max, q),
    };

    let k = time_points - 1;
    let h = t_final / k as f64;
    let times: Vec<f64> = (0..=k).map(|j| j as f64 * h).collect();

    // Midpoint collocation grid for the nonlinearity.
    let n_coll = q.pow(d as u32);
    let coll_points: Vec<[f64; crate::grid::MAX_D]> = (0..n_coll)
        .map(|p| {
            let mut rest = p;
            let mut x = [0.0f64; crate::grid::MAX_D];
            for j in 0..d {
                x[j] = ((rest % q) as f64 + 0.5) / q as f64;
                rest /= q;
            }
            x
        })
        .collect();
    // basis values at collocation points per flat mode
    let n_modes = u0.s.n_modes();
    let mut basis_at = vec![0.0; n_modes * n_coll];
    for flat in 0..n_modes {
        let m = u0.s.mode_of(flat);
        for (p, x) in coll_points.iter().enumerate() {
            let mut w = 1.0;
            for j in 0..d {
                w *= basis_1d(m[j], x[j]);
            }
            basis_at[flat * n_coll + p] = w;
        }
    }
    let eval_phys = |c: &CoeffTensor, out: &mut [f64]| {
        out.fill(0.0);
        for flat in 0..n_modes {
            let coeff = c.coeffs[flat];
            if coeff == 0.0 {
                continue;
            }
            let row = &basis_at[flat * n_coll..(flat + 1) * n_coll];
            for (o, b) in out.iter_mut().zip(row) {
                *o += coeff * b;
            }
        }
    };
    let to_coeffs = |phys: &[f64]| {
        let mut c = CoeffTensor::zeros(d, m_max);
        for flat in 0..n_modes {
            let row = &basis_at[flat * n_coll..(flat + 1) * n_coll];
            let acc: f64 = phys.iter().zip(row).map(|(&v, &b)| v * b).sum();
            c.coeffs[flat] = acc / n_coll as f64;
        }
        c
    };
    let reaction = |u: &CoeffState| -> CoeffState {
        let mut sp = vec![0.0; n_coll];
        let mut ip = vec![0.0; n_coll];
        let mut rp = vec![0.0; n_coll];
        eval_phys(&u.s, &mut sp);
        eval_phys(&u.i, &mut ip);
        eval_phys(&u.r, &mut rp);
        let mut gs = vec![0.0; n_coll];
        let mut gi = vec![0.0; n_coll];
        let mut gr = vec![0.0; n_coll];
        for p in 0..n_coll {
            let (a, b, c) = reaction_g(beta, alpha, sp[p], ip[p], rp[p]);
            gs[p] = a;
            gi[p] = b;
            gr[p] = c;
        }
        CoeffState { s: to_coeffs(&gs), i: to_coeffs(&gi), r: to_coeffs(&gr) }
    };

    // Initial iterate: the pure semigroup flow of the initial data.
    let homogeneous: Vec<CoeffState> = times
        .iter()
        .map(|&t| u0.flow(params, t))
        .collect::<Result<_>>()?;
    let mut current = homogeneous.clone();
    let mut residuals = Vec::with_capacity(picard_iters);
    for iter in 0..picard_iters {
        let g_at: Vec<CoeffState> = current.iter().map(&reaction).collect();
        let mut next = Vec::with_capacity(times.len());
        for (kk, &t) in times.iter().enumerate() {
            let mut u = homogeneous[kk].clone();
            // trapezoid over [0, t]: int_0^t T(t - r) G(u(r)) dr
            for j in 0..=kk {
                let w = if kk == 0 {
                    0.0
                } else if j == 0 || j == kk {
                    0.5 * h
                } else {
                    h
                };
                if w == 0.0 {
                    continue;
                }
                let propagated = g_at[j].flow(params, t - times[j])?;
                u.add_scaled(w, &propagated);
            }
            next.push(u);
        }
        let residual: f64 = next
            .iter()
            .zip(&current)
            .map(|(a, b)| a.diff_norm(b))
            .fold(0.0, f64::max);
        if iter >= 5 && residual >= *residuals.last().unwrap_or(&f64::INFINITY) {
            return Err(Error::PicardDiverged(format!(
                "residual {residual:.3e} did not decrease at iteration {}",
                iter + 1
            )));
        }
        residuals.push(residual);
        current = next;
    }

    let states: Vec<PatchState> = current
        .iter()
        .map(|u| {
            PatchState::new(
                coeff_to_field(&u.s, output_grid)?,
                coeff_to_field(&u.i, output_grid)?,
                coeff_to_field(&u.r, output_grid)?,
            )
        })
        .collect::<Result<_>>()?;
    Ok(ReferenceSolution {
        route: ReferenceRoute::SpectralPicard { m_max, iterations: picard_iters, residuals },
        trajectory: Trajectory { times, states },
    })
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct StudyRow {
    pub inv_eps: usize,
    pub err_s: f64,
    pub err_i: f64,
    pub err_r: f64,
    /// Sup over sample times of the sup-norm triple of the difference.
    pub err_total: f64,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct StudyTable {
    pub rows: Vec<StudyRow>,
    pub inv_eps_ref: usize,
    pub t_final: f64,
}

/// Mesh-refinement study: for each coarse mesh, integrate the patch system
/// there and compare against the restricted reference over a shared sample
/// grid. The sup over continuous time is approximated by the max over the
/// sampled times.
#[allow(clippy::too_many_arguments)]
pub fn discretization_study(
    params: &ModelParams,
    d: usize,
    s0: &SpatialFn,
    i0: &SpatialFn,
    r0: &SpatialFn,
    t_final: f64,
    inv_eps_list: &[usize],
    inv_eps_ref: usize,
    n_samples: usize,
) -> Result<StudyTable> {
    for &inv_eps in inv_eps_list {
        if inv_eps > inv_eps_ref || inv_eps_ref % inv_eps != 0 {
            return Err(Error::NotNested(format!(
                "study mesh 1/{inv_eps} does not nest in reference 1/{inv_eps_ref}"
            )));
        }
    }
    let ref_grid = build_grid(d, inv_eps_ref, crate::grid::Boundary::Neumann)?;
    let reference = solve_reference_fine_on(
        params,
        ref_grid,
        s0,
        i0,
        r0,
        t_final,
        DEFAULT_EXP_DT.min(t_final / n_samples as f64),
        n_samples,
        FineIntegrator::Exponential,
    )?;
    let mut rows = Vec::with_capacity(inv_eps_list.len());
    for &inv_eps in inv_eps_list {
        let grid = build_grid(d, inv_eps, crate::grid::Boundary::Neumann)?;
        let x0 = PatchState::project(grid, s0, i0, r0);
        let dt = default_rk4_dt(grid, params);
        let traj = integrate_rk4(
            params,
            &x0,
            t_final,
            dt,
            IntegrateOpts { n_samples, override_stability: false },
        )?;
        let mut err = [0.0f64; 3];
        let mut err_total = 0.0f64;
        for (state, ref_state) in traj.states.iter().zip(&reference.trajectory.states) {
            let restricted = restrict_state(ref_state, grid)?;
            let diff = state.sub(&restricted)?;
            err[0] = err[0].max(crate::grid::sup_norm(&diff.s));
            err[1] = err[1].max(crate::grid::sup_norm(&diff.i));
            err[2] = err[2].max(crate::grid::sup_norm(&diff.r));
            err_total = err_total.max(diff.sup_norm_triple());
        }
        rows.push(StudyRow {
            inv_eps,
            err_s: err[0],
            err_i: err[1],
            err_r: err[2],
            err_total,
        });
    }
    Ok(StudyTable { rows, inv_eps_ref, t_final })
}
