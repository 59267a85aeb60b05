//! Output writers. CSV files carry the data with fixed column sets and
//! shortest round-trip float formatting, so identical runs produce identical
//! bytes; wall-clock metadata is confined to the JSON manifest.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::experiments::{LlnReport, MartingaleReport, SupnormReport};
use crate::patch::Trajectory;
use crate::reference::StudyTable;
use crate::ssa::SimOutput;

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Deterministic trajectory: one row per sample time and site.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let mut out = String::from("t,site_index,s,i,r\n");
    for (t, state) in traj.times.iter().zip(&traj.states) {
        for site in 0..state.grid().n_sites() {
            let _ = writeln!(
                out,
                "{t},{site},{},{},{}",
                state.s.values()[site],
                state.i.values()[site],
                state.r.values()[site]
            );
        }
    }
    out
}

/// Stochastic trajectories: renormalized densities, one block per replica.
pub fn ssa_trajectory_csv(outputs: &[SimOutput]) -> String {
    let mut out = String::from("t,site_index,s,i,r,replica_id,event_count\n");
    for (replica, run) in outputs.iter().enumerate() {
        for (t, state) in run.times.iter().zip(&run.states) {
            for site in 0..state.grid().n_sites() {
                let _ = writeln!(
                    out,
                    "{t},{site},{},{},{},{replica},{}",
                    state.s.values()[site],
                    state.i.values()[site],
                    state.r.values()[site],
                    run.event_count
                );
            }
        }
    }
    out
}

/// Mesh-refinement table: errors against the restricted fine reference.
pub fn study_csv(table: &StudyTable) -> String {
    let mut out = String::from("eps,sup_error_S,sup_error_I,sup_error_R,sup_error_total\n");
    for row in &table.rows {
        let eps = 1.0 / row.inv_eps as f64;
        let _ = writeln!(out, "{eps},{},{},{},{}", row.err_s, row.err_i, row.err_r, row.err_total);
    }
    out
}

pub fn lln_csv(report: &LlnReport) -> String {
    let mut out = String::from("n_scale,mean_sup_error,stderr,replicas\n");
    for row in &report.rows {
        let _ = writeln!(out, "{},{},{},{}", row.n_scale, row.mean_sup_err, row.stderr, row.replicas);
    }
    out
}

pub fn supnorm_csv(report: &SupnormReport) -> String {
    let mut out = String::from("eps,n_scale,mean_sup_error,stderr,replicas\n");
    for row in &report.rows {
        let eps = 1.0 / row.inv_eps as f64;
        let _ = writeln!(
            out,
            "{eps},{},{},{},{}",
            row.n_scale, row.mean_sup_err, row.stderr, row.replicas
        );
    }
    out
}

pub fn martingale_csv(report: &MartingaleReport) -> String {
    let mut out = String::from("n_scale,mean_sup_error,stderr,replicas\n");
    for row in &report.rows {
        let _ = writeln!(out, "{},{},{},{}", row.n_scale, row.mean_sup_err, row.stderr, row.replicas);
    }
    out
}

pub fn martingale_pointwise_csv(report: &MartingaleReport) -> String {
    let mut out =
        String::from("t,mean_s,stderr_s,mean_i,stderr_i,mean_r,stderr_r\n");
    for p in &report.pointwise {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            p.time, p.mean[0], p.stderr[0], p.mean[1], p.stderr[1], p.mean[2], p.stderr[2]
        );
    }
    out
}

pub fn write_csv(path: &Path, content: &str) -> Result<()> {
    write_text(path, content)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    write_text(path, &(text + "\n"))
}

/// A minimal static log-log scatter plot with a connecting line. Point labels
/// and axes only; no styling beyond what a quick visual check needs.
pub fn log_log_svg(title: &str, x_label: &str, y_label: &str, xs: &[f64], ys: &[f64]) -> String {
    let (w, h) = (480.0, 360.0);
    let (ml, mr, mt, mb) = (60.0, 20.0, 30.0, 50.0);
    let lx: Vec<f64> = xs.iter().map(|v| v.log10()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.log10()).collect();
    let span = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if (hi - lo).abs() < 1e-12 { (lo - 0.5, hi + 0.5) } else { (lo, hi) }
    };
    let (x0, x1) = span(&lx);
    let (y0, y1) = span(&ly);
    let px = |v: f64| ml + (v - x0) / (x1 - x0) * (w - ml - mr);
    let py = |v: f64| h - mb - (v - y0) / (y1 - y0) * (h - mt - mb);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{title}</text>\n\
         <line x1=\"{ml}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{}\" stroke=\"black\"/>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">{x_label}</text>\n\
         <text x=\"15\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 15 {})\">{y_label}</text>\n",
        w / 2.0,
        h - mb,
        w - mr,
        h - mb,
        h - mb,
        w / 2.0,
        h - 12.0,
        h / 2.0,
        h / 2.0,
    );
    let mut points = String::new();
    for (a, b) in lx.iter().zip(&ly) {
        let _ = write!(points, "{:.2},{:.2} ", px(*a), py(*b));
    }
    let _ = writeln!(
        svg,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\"/>",
        points.trim_end()
    );
    for (a, b) in lx.iter().zip(&ly) {
        let _ = writeln!(
            svg,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"steelblue\"/>",
            px(*a),
            py(*b)
        );
    }
    for (v, orig) in lx.iter().zip(xs) {
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{}\" text-anchor=\"middle\" font-size=\"10\">{orig}</text>",
            px(*v),
            h - mb + 15.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn write_svg(path: &Path, content: &str) -> Result<()> {
    write_text(path, content)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::LlnRow;
    use crate::grid::{build_grid, Boundary};
    use crate::patch::{integrate_rk4, IntegrateOpts, PatchState, SpatialFn};
    use crate::scenario::baseline_scenario;

    fn tiny_trajectory() -> Trajectory {
        let sc = baseline_scenario(1, 4);
        let grid = build_grid(1, 4, Boundary::Neumann).unwrap();
        let x0 = PatchState::project(grid, &sc.s0, &sc.i0, &sc.r0);
        integrate_rk4(
            &sc.params,
            &x0,
            0.2,
            1e-2,
            IntegrateOpts { n_samples: 2, override_stability: false },
        )
        .unwrap()
    }

    #[test]
    fn trajectory_csv_shape() {
        let traj = tiny_trajectory();
        let csv = trajectory_csv(&traj);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,site_index,s,i,r");
        // 3 sample times x 4 sites
        assert_eq!(lines.len(), 1 + 3 * 4);
        for line in &lines[1..] {
            assert_eq!(line.split(',').count(), 5);
        }
    }

    #[test]
    fn csv_is_byte_stable() {
        let traj = tiny_trajectory();
        assert_eq!(trajectory_csv(&traj), trajectory_csv(&traj));
    }

    #[test]
    fn csv_round_trips_floats() {
        let traj = tiny_trajectory();
        let csv = trajectory_csv(&traj);
        let line1: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
        let s: f64 = line1[2].parse().unwrap();
        assert_eq!(s, traj.states[0].s.values()[0]);
    }

    #[test]
    fn ssa_csv_has_replica_columns() {
        use crate::rng::replica_rng;
        use crate::ssa::{simulate, uniform_sample_times, InitMode};
        let sc = baseline_scenario(1, 4);
        let grid = build_grid(1, 4, Boundary::Neumann).unwrap();
        let mut rng = replica_rng(1, 0);
        let out = simulate(
            100,
            &sc.params,
            grid,
            &sc.s0,
            &sc.i0,
            &sc.r0,
            0.2,
            &uniform_sample_times(0.2, 2),
            InitMode::Multinomial,
            &mut rng,
        )
        .unwrap();
        let csv = ssa_trajectory_csv(&[out.clone(), out]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,site_index,s,i,r,replica_id,event_count");
        assert_eq!(lines.len(), 1 + 2 * 3 * 4);
        assert!(lines[1].ends_with(",0") == false || lines[1].split(',').count() == 7);
        let last: Vec<&str> = lines.last().unwrap().split(',').collect();
        assert_eq!(last[5], "1");
    }

    #[test]
    fn study_csv_header() {
        let table = StudyTable {
            rows: vec![crate::reference::StudyRow {
                inv_eps: 8,
                err_s: 0.1,
                err_i: 0.2,
                err_r: 0.3,
                err_total: 0.35,
            }],
            inv_eps_ref: 64,
            t_final: 1.0,
        };
        let csv = study_csv(&table);
        assert!(csv.starts_with("eps,sup_error_S,sup_error_I,sup_error_R,sup_error_total\n"));
        assert!(csv.contains("0.125,0.1,0.2,0.3,0.35"));
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let report = LlnReport {
            rows: vec![
                LlnRow { n_scale: 100, mean_sup_err: 0.5, stderr: 0.05, replicas: 10 },
                LlnRow { n_scale: 1000, mean_sup_err: 0.16, stderr: 0.02, replicas: 10 },
            ],
            slope: -0.5,
        };
        let xs: Vec<f64> = report.rows.iter().map(|r| r.n_scale as f64).collect();
        let ys: Vec<f64> = report.rows.iter().map(|r| r.mean_sup_err).collect();
        let svg = log_log_svg("lln decay", "N", "error", &xs, &ys);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<circle").count(), 2);
    }

    #[test]
    fn writers_create_parent_dirs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/out.csv");
        write_csv(&path, "a,b\n1,2\n").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "a,b\n1,2\n");
    }
}
