//! Python bindings: grids with the discrete Laplacian and heat semigroup,
//! scenario-driven deterministic and stochastic runs, and the convergence
//! studies.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use gridsir::error::Error;
use gridsir::experiments::{run_fixed_eps_lln, run_martingale_decay};
use gridsir::grid::{build_grid, discrete_laplacian, Boundary, Field, GridSpec};
use gridsir::patch::{default_rk4_dt, integrate_rk4, IntegrateOpts, PatchState, Trajectory};
use gridsir::reference::discretization_study;
use gridsir::rng::replica_rng;
use gridsir::scenario::parse_scenario;
use gridsir::spectral::semigroup_apply;
use gridsir::ssa::{simulate, uniform_sample_times, InitMode};

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Validation(_) | Error::Parse(_) | Error::InvalidArgument(_)
        | Error::InvalidGrid(_) | Error::InvalidPlan(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn parse_boundary(s: &str) -> PyResult<Boundary> {
    match s {
        "neumann" => Ok(Boundary::Neumann),
        "periodic" => Ok(Boundary::Periodic),
        other => Err(PyValueError::new_err(format!(
            "boundary must be 'neumann' or 'periodic', got '{other}'"
        ))),
    }
}

fn field_from(grid: GridSpec, values: Vec<f64>) -> PyResult<Field> {
    Field::new(grid, values).map_err(to_py_err)
}

fn state_dict<'py>(py: Python<'py>, state: &PatchState) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("s", state.s.values().to_vec())?;
    d.set_item("i", state.i.values().to_vec())?;
    d.set_item("r", state.r.values().to_vec())?;
    Ok(d)
}

fn trajectory_dict<'py>(py: Python<'py>, traj: &Trajectory) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("times", traj.times.clone())?;
    let states: Vec<Bound<'py, PyDict>> = traj
        .states
        .iter()
        .map(|s| state_dict(py, s))
        .collect::<PyResult<_>>()?;
    d.set_item("states", states)?;
    Ok(d)
}

/// A uniform lattice on the unit box.
#[pyclass(name = "Grid", skip_from_py_object)]
#[derive(Clone)]
struct PyGrid {
    grid: GridSpec,
}

#[pymethods]
impl PyGrid {
    #[new]
    #[pyo3(signature = (d, inv_eps, boundary = "neumann"))]
    fn new(d: usize, inv_eps: usize, boundary: &str) -> PyResult<Self> {
        let grid = build_grid(d, inv_eps, parse_boundary(boundary)?).map_err(to_py_err)?;
        Ok(PyGrid { grid })
    }

    #[getter]
    fn d(&self) -> usize {
        self.grid.d()
    }

    #[getter]
    fn inv_eps(&self) -> usize {
        self.grid.inv_eps()
    }

    #[getter]
    fn eps(&self) -> f64 {
        self.grid.eps()
    }

    #[getter]
    fn n_sites(&self) -> usize {
        self.grid.n_sites()
    }

    /// Cell center of a flat site index.
    fn cell_center(&self, site: usize) -> PyResult<Vec<f64>> {
        if site >= self.grid.n_sites() {
            return Err(PyValueError::new_err(format!("site {site} out of range")));
        }
        Ok(self.grid.cell_center(site)[..self.grid.d()].to_vec())
    }

    /// Discrete Laplacian applied to per-site values.
    fn laplacian(&self, values: Vec<f64>) -> PyResult<Vec<f64>> {
        let f = field_from(self.grid, values)?;
        Ok(discrete_laplacian(&f).into_values())
    }

    /// Heat semigroup `exp(t mu Laplacian)` applied to per-site values.
    fn semigroup(&self, values: Vec<f64>, t: f64, mu: f64) -> PyResult<Vec<f64>> {
        let f = field_from(self.grid, values)?;
        Ok(semigroup_apply(&f, t, mu).map_err(to_py_err)?.into_values())
    }

    /// Integral of the step function represented by the values.
    fn mass(&self, values: Vec<f64>) -> PyResult<f64> {
        Ok(field_from(self.grid, values)?.mass())
    }

    fn __repr__(&self) -> String {
        format!(
            "Grid(d={}, inv_eps={}, boundary='{:?}')",
            self.grid.d(),
            self.grid.inv_eps(),
            self.grid.boundary()
        )
    }
}

/// A validated scenario; construct from a JSON document.
#[pyclass(name = "Scenario")]
struct PyScenario {
    scenario: gridsir::scenario::Scenario,
    normalization_factor: f64,
}

#[pymethods]
impl PyScenario {
    #[new]
    fn new(json: &str) -> PyResult<Self> {
        let loaded = parse_scenario(json).map_err(to_py_err)?;
        Ok(PyScenario {
            scenario: loaded.scenario,
            normalization_factor: loaded.normalization_factor,
        })
    }

    #[getter]
    fn name(&self) -> String {
        self.scenario.name.clone()
    }

    #[getter]
    fn normalization_factor(&self) -> f64 {
        self.normalization_factor
    }

    #[getter]
    fn grid(&self) -> PyResult<PyGrid> {
        Ok(PyGrid { grid: self.scenario.grid().map_err(to_py_err)? })
    }

    /// Integrate the deterministic patch system; returns times and states.
    fn ode<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let sc = &self.scenario;
        let grid = sc.grid().map_err(to_py_err)?;
        let x0 = PatchState::project(grid, &sc.s0, &sc.i0, &sc.r0);
        let traj = integrate_rk4(
            &sc.params,
            &x0,
            sc.t_final,
            default_rk4_dt(grid, &sc.params),
            IntegrateOpts { n_samples: sc.n_samples, override_stability: false },
        )
        .map_err(to_py_err)?;
        trajectory_dict(py, &traj)
    }

    /// One stochastic replica; returns times, renormalized states and the
    /// event count.
    #[pyo3(signature = (seed, replica = 0))]
    fn simulate<'py>(&self, py: Python<'py>, seed: u64, replica: u64) -> PyResult<Bound<'py, PyDict>> {
        let sc = &self.scenario;
        let n_scale = sc
            .n_scale
            .ok_or_else(|| PyValueError::new_err("scenario has no n_scale"))? as u64;
        let grid = sc.grid().map_err(to_py_err)?;
        let times = uniform_sample_times(sc.t_final, sc.n_samples);
        let mut rng = replica_rng(seed, replica);
        let out = simulate(
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
        .map_err(to_py_err)?;
        let d = PyDict::new(py);
        d.set_item("times", out.times.clone())?;
        let states: Vec<Bound<'py, PyDict>> = out
            .states
            .iter()
            .map(|s| state_dict(py, s))
            .collect::<PyResult<_>>()?;
        d.set_item("states", states)?;
        d.set_item("event_count", out.event_count)?;
        Ok(d)
    }

    /// Fixed-mesh law-of-large-numbers study; returns rows and the log-log
    /// slope of the mean error against N.
    fn lln_study<'py>(
        &self,
        py: Python<'py>,
        n_list: Vec<u64>,
        replicas: usize,
        seed: u64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let report = run_fixed_eps_lln(&self.scenario, &n_list, replicas, seed).map_err(to_py_err)?;
        let d = PyDict::new(py);
        let rows: Vec<Bound<'py, PyDict>> = report
            .rows
            .iter()
            .map(|r| {
                let row = PyDict::new(py);
                row.set_item("n_scale", r.n_scale)?;
                row.set_item("mean_sup_error", r.mean_sup_err)?;
                row.set_item("stderr", r.stderr)?;
                Ok(row)
            })
            .collect::<PyResult<_>>()?;
        d.set_item("rows", rows)?;
        d.set_item("slope", report.slope)?;
        Ok(d)
    }

    /// Martingale decay study; returns rows and the log-log slope.
    fn martingale_study<'py>(
        &self,
        py: Python<'py>,
        n_list: Vec<u64>,
        replicas: usize,
        seed: u64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let report =
            run_martingale_decay(&self.scenario, &n_list, replicas, seed).map_err(to_py_err)?;
        let d = PyDict::new(py);
        let rows: Vec<Bound<'py, PyDict>> = report
            .rows
            .iter()
            .map(|r| {
                let row = PyDict::new(py);
                row.set_item("n_scale", r.n_scale)?;
                row.set_item("mean_sup_error", r.mean_sup_err)?;
                row.set_item("stderr", r.stderr)?;
                Ok(row)
            })
            .collect::<PyResult<_>>()?;
        d.set_item("rows", rows)?;
        d.set_item("slope", report.slope)?;
        Ok(d)
    }

    /// Mesh-refinement study against a fine reference.
    fn eps_study<'py>(
        &self,
        py: Python<'py>,
        inv_eps_list: Vec<usize>,
        inv_eps_ref: usize,
    ) -> PyResult<Bound<'py, PyDict>> {
        let table = discretization_study(
            &self.scenario.params,
            self.scenario.d,
            &self.scenario.s0,
            &self.scenario.i0,
            &self.scenario.r0,
            self.scenario.t_final,
            &inv_eps_list,
            inv_eps_ref,
            self.scenario.n_samples,
        )
        .map_err(to_py_err)?;
        let d = PyDict::new(py);
        let rows: Vec<Bound<'py, PyDict>> = table
            .rows
            .iter()
            .map(|r| {
                let row = PyDict::new(py);
                row.set_item("inv_eps", r.inv_eps)?;
                row.set_item("sup_error_total", r.err_total)?;
                Ok(row)
            })
            .collect::<PyResult<_>>()?;
        d.set_item("rows", rows)?;
        Ok(d)
    }
}

/// The built-in baseline scenario as a JSON document.
#[pyfunction]
fn baseline_scenario_json(d: usize, inv_eps: usize) -> PyResult<String> {
    let sc = gridsir::scenario::baseline_scenario(d, inv_eps);
    serde_json::to_string_pretty(&sc).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn gridsir_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrid>()?;
    m.add_class::<PyScenario>()?;
    m.add_function(wrap_pyfunction!(baseline_scenario_json, m)?)?;
    Ok(())
}
