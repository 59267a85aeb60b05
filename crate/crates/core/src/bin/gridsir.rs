//! Command-line front end: stochastic and deterministic runs plus the
//! convergence studies, driven by a scenario file.
//!
//! Exit codes: 0 success, 1 scenario/argument validation failure, 2 runtime
//! failure, 3 a `--strict` convergence threshold was not met.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use gridsir::error::Error;
use gridsir::experiments::{
    run_discretization_study, run_fixed_eps_lln, run_joint_supnorm_lln, run_martingale_decay,
    ScheduleStep,
};
use gridsir::patch::{integrate_rk4, default_rk4_dt, IntegrateOpts, PatchState};
use gridsir::report;
use gridsir::rng::replica_rng;
use gridsir::scenario::{load_scenario, LoadedScenario, RunManifest};
use gridsir::ssa::{simulate, uniform_sample_times, InitMode, SimOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
    Svg,
}

#[derive(Debug, Parser)]
#[command(name = "gridsir", version, about = "spatial stochastic SIR laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Scenario JSON file.
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,

    /// Base seed; replica seeds are derived deterministically from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Number of stochastic replicas.
    #[arg(long, global = true, default_value_t = 8)]
    replicas: usize,

    /// Worker threads (default: all cores). Results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output formats; repeatable. Default: csv.
    #[arg(long, global = true, value_enum)]
    format: Vec<Format>,

    /// Exit with code 3 when a convergence threshold is not met.
    #[arg(long, global = true)]
    strict: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run stochastic replicas and write renormalized trajectories.
    Simulate,
    /// Integrate the deterministic patch system.
    Ode,
    /// Mesh-refinement study of the patch system against a fine reference.
    StudyEps(StudyEpsArgs),
    /// Fixed-mesh law-of-large-numbers decay in the population scale.
    StudyLln(NListArgs),
    /// Joint mesh/population limit along an admissible schedule.
    StudySupnorm(SupnormArgs),
    /// Decay of the compensated martingale.
    StudyMartingale(NListArgs),
    /// Parse and validate a scenario file, then print a summary.
    Validate,
}

#[derive(Debug, Args)]
struct StudyEpsArgs {
    /// Comma-separated list of 1/eps values to study.
    #[arg(long, value_delimiter = ',', default_value = "8,16,32,64")]
    inv_eps_list: Vec<usize>,

    /// 1/eps of the fine reference mesh; every studied mesh must divide it.
    #[arg(long, default_value_t = 256)]
    inv_eps_ref: usize,
}

#[derive(Debug, Args)]
struct NListArgs {
    /// Comma-separated list of population scales N.
    #[arg(long, value_delimiter = ',', default_value = "100,1000,10000")]
    n_list: Vec<u64>,
}

#[derive(Debug, Args)]
struct SupnormArgs {
    /// Schedule steps as inv_eps:n_scale pairs, e.g. 4:200,8:800,16:3200.
    #[arg(long, value_delimiter = ',', default_value = "4:200,8:800,16:3200")]
    schedule: Vec<String>,

    #[arg(long, default_value_t = 64)]
    inv_eps_ref: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(strict_ok) => {
            if strict_ok {
                ExitCode::SUCCESS
            } else {
                eprintln!("strict thresholds not met");
                ExitCode::from(3)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Validation(_) | Error::Parse(_) | Error::InvalidPlan(_)
                | Error::InvalidArgument(_) | Error::InvalidGrid(_) => 1,
                _ => 2,
            };
            ExitCode::from(code)
        }
    }
}

fn formats(cli: &Cli) -> Vec<Format> {
    if cli.format.is_empty() {
        vec![Format::Csv]
    } else {
        cli.format.clone()
    }
}

fn load(cli: &Cli) -> Result<LoadedScenario, Error> {
    let path = cli
        .scenario
        .as_ref()
        .ok_or_else(|| Error::Validation("--scenario is required".into()))?;
    let loaded = load_scenario(path)?;
    if loaded.normalization_factor != 1.0 {
        eprintln!(
            "normalized initial data by factor {:.6}",
            loaded.normalization_factor
        );
    }
    Ok(loaded)
}

/// Returns false when `--strict` thresholds were violated.
fn run(cli: &Cli) -> Result<bool, Error> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("--threads: {e}")))?;
    }
    let loaded = load(cli)?;
    let sc = &loaded.scenario;
    let fmts = formats(cli);
    let command_name = match &cli.command {
        Command::Simulate => "simulate",
        Command::Ode => "ode",
        Command::StudyEps(_) => "study-eps",
        Command::StudyLln(_) => "study-lln",
        Command::StudySupnorm(_) => "study-supnorm",
        Command::StudyMartingale(_) => "study-martingale",
        Command::Validate => "validate",
    };

    if let Command::Validate = cli.command {
        println!(
            "scenario '{}' ok: d={} 1/eps={} t_final={} normalization={:.6}",
            sc.name, sc.d, sc.inv_eps, sc.t_final, loaded.normalization_factor
        );
        return Ok(true);
    }

    std::fs::create_dir_all(&cli.out)?;
    let manifest = RunManifest::new(command_name, &loaded, cli.seed, cli.replicas, rayon::current_num_threads());
    manifest.write(&cli.out.join("manifest.json"))?;

    let mut strict_ok = true;
    match &cli.command {
        Command::Validate => unreachable!(),
        Command::Simulate => {
            let n_scale = sc.n_scale.ok_or_else(|| {
                Error::Validation("n_scale: required for stochastic runs".into())
            })? as u64;
            let grid = sc.grid()?;
            let times = uniform_sample_times(sc.t_final, sc.n_samples);
            let outputs: Vec<SimOutput> = (0..cli.replicas)
                .map(|k| {
                    let mut rng = replica_rng(cli.seed, k as u64);
                    simulate(
                        n_scale,
                        &sc.params,
                        grid,
                        &sc.s0,
                        &sc.i0,
                        &sc.r0,
                        sc.t_final,
                        &times,
                        InitMode::Multinomial,
                        &mut rng,
                    )
                })
                .collect::<Result<_, _>>()?;
            for fmt in &fmts {
                match fmt {
                    Format::Csv => report::write_csv(
                        &cli.out.join("trajectory.csv"),
                        &report::ssa_trajectory_csv(&outputs),
                    )?,
                    Format::Json => {
                        let events: Vec<u64> = outputs.iter().map(|o| o.event_count).collect();
                        report::write_json(
                            &cli.out.join("summary.json"),
                            &serde_json::json!({
                                "replicas": outputs.len(),
                                "event_counts": events,
                                "t_final": sc.t_final,
                            }),
                        )?
                    }
                    Format::Svg => {}
                }
            }
            let total: u64 = outputs.iter().map(|o| o.event_count).sum();
            println!("{} replicas, {total} events total", outputs.len());
        }
        Command::Ode => {
            let grid = sc.grid()?;
            let x0 = PatchState::project(grid, &sc.s0, &sc.i0, &sc.r0);
            let traj = integrate_rk4(
                &sc.params,
                &x0,
                sc.t_final,
                default_rk4_dt(grid, &sc.params),
                IntegrateOpts { n_samples: sc.n_samples, override_stability: false },
            )?;
            for fmt in &fmts {
                match fmt {
                    Format::Csv => report::write_csv(
                        &cli.out.join("trajectory.csv"),
                        &report::trajectory_csv(&traj),
                    )?,
                    Format::Json => report::write_json(
                        &cli.out.join("summary.json"),
                        &serde_json::json!({
                            "mass_initial": traj.states[0].mass(),
                            "mass_final": traj.states.last().unwrap().mass(),
                            "t_final": sc.t_final,
                        }),
                    )?,
                    Format::Svg => {}
                }
            }
            println!("ode run complete: {} samples", traj.times.len());
        }
        Command::StudyEps(args) => {
            let table = run_discretization_study(sc, &args.inv_eps_list, args.inv_eps_ref)?;
            let errs: Vec<f64> = table.rows.iter().map(|r| r.err_total).collect();
            emit_study(cli, &fmts, "study_eps", &report::study_csv(&table), &table, || {
                let xs: Vec<f64> = table.rows.iter().map(|r| 1.0 / r.inv_eps as f64).collect();
                report::log_log_svg("patch error vs eps", "eps", "sup error", &xs, &errs)
            })?;
            for row in &table.rows {
                println!("1/eps={:<4} sup_error_total={:.6e}", row.inv_eps, row.err_total);
            }
            if cli.strict {
                strict_ok = errs.windows(2).all(|w| w[1] < w[0])
                    && errs.last().is_some_and(|&e| e <= 0.02);
            }
        }
        Command::StudyLln(args) => {
            let rep = run_fixed_eps_lln(sc, &args.n_list, cli.replicas, cli.seed)?;
            emit_study(cli, &fmts, "study_lln", &report::lln_csv(&rep), &rep, || {
                let xs: Vec<f64> = rep.rows.iter().map(|r| r.n_scale as f64).collect();
                let ys: Vec<f64> = rep.rows.iter().map(|r| r.mean_sup_err).collect();
                report::log_log_svg("lln decay", "N", "mean sup error", &xs, &ys)
            })?;
            for row in &rep.rows {
                println!(
                    "N={:<8} mean_sup_error={:.6e} stderr={:.2e}",
                    row.n_scale, row.mean_sup_err, row.stderr
                );
            }
            println!("log-log slope: {:.3}", rep.slope);
            if cli.strict {
                strict_ok = rep
                    .rows
                    .windows(2)
                    .all(|w| w[1].mean_sup_err < w[0].mean_sup_err);
            }
        }
        Command::StudySupnorm(args) => {
            let schedule = parse_schedule(&args.schedule)?;
            let rep = run_joint_supnorm_lln(sc, &schedule, args.inv_eps_ref, cli.replicas, cli.seed)?;
            emit_study(cli, &fmts, "study_supnorm", &report::supnorm_csv(&rep), &rep, || {
                let xs: Vec<f64> = rep.rows.iter().map(|r| 1.0 / r.inv_eps as f64).collect();
                let ys: Vec<f64> = rep.rows.iter().map(|r| r.mean_sup_err).collect();
                report::log_log_svg("joint limit", "eps", "mean sup error", &xs, &ys)
            })?;
            for row in &rep.rows {
                println!(
                    "1/eps={:<4} N={:<8} mean_sup_error={:.6e} stderr={:.2e}",
                    row.inv_eps, row.n_scale, row.mean_sup_err, row.stderr
                );
            }
            if cli.strict {
                strict_ok = rep
                    .rows
                    .windows(2)
                    .all(|w| w[1].mean_sup_err < w[0].mean_sup_err);
            }
        }
        Command::StudyMartingale(args) => {
            let rep = run_martingale_decay(sc, &args.n_list, cli.replicas, cli.seed)?;
            for fmt in &fmts {
                match fmt {
                    Format::Csv => {
                        report::write_csv(
                            &cli.out.join("study_martingale.csv"),
                            &report::martingale_csv(&rep),
                        )?;
                        report::write_csv(
                            &cli.out.join("study_martingale_pointwise.csv"),
                            &report::martingale_pointwise_csv(&rep),
                        )?;
                    }
                    Format::Json => {
                        report::write_json(&cli.out.join("study_martingale.json"), &rep)?
                    }
                    Format::Svg => {
                        let xs: Vec<f64> = rep.rows.iter().map(|r| r.n_scale as f64).collect();
                        let ys: Vec<f64> = rep.rows.iter().map(|r| r.mean_sup_err).collect();
                        report::write_svg(
                            &cli.out.join("study_martingale.svg"),
                            &report::log_log_svg("martingale decay", "N", "mean sup error", &xs, &ys),
                        )?;
                    }
                }
            }
            for row in &rep.rows {
                println!(
                    "N={:<8} mean_sup_error={:.6e} stderr={:.2e}",
                    row.n_scale, row.mean_sup_err, row.stderr
                );
            }
            println!("log-log slope: {:.3}", rep.slope);
            if cli.strict {
                let slope_ok = rep.rows.len() < 2 || (rep.slope + 0.5).abs() <= 0.15;
                let mean_ok = rep
                    .pointwise
                    .iter()
                    .all(|p| (0..3).all(|c| p.mean[c].abs() <= 3.0 * p.stderr[c] + 1e-12));
                strict_ok = slope_ok && mean_ok;
            }
        }
    }
    Ok(strict_ok)
}

fn emit_study<T: serde::Serialize>(
    cli: &Cli,
    fmts: &[Format],
    stem: &str,
    csv: &str,
    value: &T,
    svg: impl FnOnce() -> String,
) -> Result<(), Error> {
    if fmts.contains(&Format::Csv) {
        report::write_csv(&cli.out.join(format!("{stem}.csv")), csv)?;
    }
    if fmts.contains(&Format::Json) {
        report::write_json(&cli.out.join(format!("{stem}.json")), value)?;
    }
    if fmts.contains(&Format::Svg) {
        report::write_svg(&cli.out.join(format!("{stem}.svg")), &svg())?;
    }
    Ok(())
}

fn parse_schedule(items: &[String]) -> Result<Vec<ScheduleStep>, Error> {
    items
        .iter()
        .map(|item| {
            let (a, b) = item.split_once(':').ok_or_else(|| {
                Error::InvalidPlan(format!("schedule step '{item}' is not inv_eps:n_scale"))
            })?;
            Ok(ScheduleStep {
                inv_eps: a
                    .parse()
                    .map_err(|e| Error::InvalidPlan(format!("schedule step '{item}': {e}")))?,
                n_scale: b
                    .parse()
                    .map_err(|e| Error::InvalidPlan(format!("schedule step '{item}': {e}")))?,
            })
        })
        .collect()
}
