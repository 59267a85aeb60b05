//! The deterministic patch model: per-site SIR reaction coupled by discrete
//! diffusion, `dX/dt = D~_eps X + G(x; X)`, with two independent integrators
//! (classical RK4 and exponential Lawson stepping on the exact semigroup).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{discrete_laplacian, project, sup_norm, Field, GridSpec};
use crate::spectral::SemigroupOperator;

/// Spatial coefficient or density profile on the unit box.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpatialFn {
    Constant { value: f64 },
    GaussianBump {
        center: Vec<f64>,
        width: f64,
        base: f64,
        peak: f64,
    },
    Raster { grid: GridSpec, values: Vec<f64> },
}

impl SpatialFn {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            SpatialFn::Constant { value } => *value,
            SpatialFn::GaussianBump { center, width, base, peak } => {
                let r2: f64 = x
                    .iter()
                    .zip(center)
                    .map(|(&xi, &ci)| (xi - ci) * (xi - ci))
                    .sum();
                base + peak * (-r2 / (2.0 * width * width)).exp()
            }
            SpatialFn::Raster { grid, values } => {
                let mut multi = [0usize; crate::grid::MAX_D];
                for j in 0..grid.d() {
                    let i = (x[j] * grid.inv_eps() as f64).floor() as isize;
                    multi[j] = i.clamp(0, grid.inv_eps() as isize - 1) as usize;
                }
                values[grid.flatten(&multi[..grid.d()])]
            }
        }
    }

    /// Supremum over the domain (exact for the built-in families).
    pub fn sup(&self) -> f64 {
        match self {
            SpatialFn::Constant { value } => *value,
            SpatialFn::GaussianBump { base, peak, .. } => base + peak.max(0.0),
            SpatialFn::Raster { values, .. } => {
                values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            }
        }
    }

    /// Infimum over the domain (exact for the built-in families).
    pub fn inf(&self) -> f64 {
        match self {
            SpatialFn::Constant { value } => *value,
            SpatialFn::GaussianBump { base, peak, .. } => base + peak.min(0.0),
            SpatialFn::Raster { values, .. } => {
                values.iter().copied().fold(f64::INFINITY, f64::min)
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, SpatialFn::Constant { .. })
    }

    /// The same profile multiplied pointwise by `factor`.
    pub fn scaled(&self, factor: f64) -> SpatialFn {
        match self {
            SpatialFn::Constant { value } => SpatialFn::Constant { value: value * factor },
            SpatialFn::GaussianBump { center, width, base, peak } => SpatialFn::GaussianBump {
                center: center.clone(),
                width: *width,
                base: base * factor,
                peak: peak * factor,
            },
            SpatialFn::Raster { grid, values } => SpatialFn::Raster {
                grid: *grid,
                values: values.iter().map(|v| v * factor).collect(),
            },
        }
    }
}

/// Model coefficients: infection rate `beta(x)`, recovery rate `alpha(x)` and
/// the three diffusivities.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub beta: SpatialFn,
    pub alpha: SpatialFn,
    pub mu_s: f64,
    pub mu_i: f64,
    pub mu_r: f64,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        if self.beta.inf() < 0.0 {
            return Err(Error::Validation("beta must be >= 0 on D".into()));
        }
        if self.alpha.inf() < 0.0 {
            return Err(Error::Validation("alpha must be >= 0 on D".into()));
        }
        for (name, mu) in [("mu_S", self.mu_s), ("mu_I", self.mu_i), ("mu_R", self.mu_r)] {
            if !(mu >= 0.0) {
                return Err(Error::Validation(format!("{name} must be >= 0, got {mu}")));
            }
        }
        Ok(())
    }

    pub fn beta_bar(&self) -> f64 {
        self.beta.sup()
    }

    pub fn alpha_bar(&self) -> f64 {
        self.alpha.sup()
    }

    pub fn mu_max(&self) -> f64 {
        self.mu_s.max(self.mu_i).max(self.mu_r)
    }

    /// Rates sampled at the cell centers of `grid`.
    pub fn discretize(&self, grid: GridSpec) -> DiscreteRates {
        let n = grid.n_sites();
        let mut beta = Vec::with_capacity(n);
        let mut alpha = Vec::with_capacity(n);
        for site in 0..n {
            let x = grid.cell_center(site);
            beta.push(self.beta.eval(&x[..grid.d()]));
            alpha.push(self.alpha.eval(&x[..grid.d()]));
        }
        DiscreteRates { grid, beta, alpha }
    }
}

/// Per-site infection and recovery rates.
#[derive(Debug, Clone)]
pub struct DiscreteRates {
    pub grid: GridSpec,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
}

/// Deterministic state: susceptible, infectious and removed density fields on
/// a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchState {
    pub s: Field,
    pub i: Field,
    pub r: Field,
}

impl PatchState {
    pub fn new(s: Field, i: Field, r: Field) -> Result<Self> {
        if s.grid() != i.grid() || s.grid() != r.grid() {
            return Err(Error::GridMismatch("patch state components".into()));
        }
        Ok(PatchState { s, i, r })
    }

    pub fn grid(&self) -> GridSpec {
        self.s.grid()
    }

    pub fn zeros(grid: GridSpec) -> Self {
        PatchState {
            s: Field::zeros(grid),
            i: Field::zeros(grid),
            r: Field::zeros(grid),
        }
    }

    /// Project continuous densities onto the grid.
    pub fn project(grid: GridSpec, s0: &SpatialFn, i0: &SpatialFn, r0: &SpatialFn) -> Self {
        let d = grid.d();
        PatchState {
            s: project(|x| s0.eval(&x[..d]), grid, 5),
            i: project(|x| i0.eval(&x[..d]), grid, 5),
            r: project(|x| r0.eval(&x[..d]), grid, 5),
        }
    }

    /// `eps^d sum_i (s + i + r)`, the total population fraction.
    pub fn mass(&self) -> f64 {
        self.s.mass() + self.i.mass() + self.r.mass()
    }

    /// `||s||_inf + ||i||_inf + ||r||_inf`.
    pub fn sup_norm_triple(&self) -> f64 {
        sup_norm(&self.s) + sup_norm(&self.i) + sup_norm(&self.r)
    }

    pub fn min_value(&self) -> f64 {
        self.s.min_value().min(self.i.min_value()).min(self.r.min_value())
    }

    pub fn axpy(&mut self, a: f64, x: &PatchState) {
        self.s.axpy(a, &x.s);
        self.i.axpy(a, &x.i);
        self.r.axpy(a, &x.r);
    }

    pub fn scale(&self, c: f64) -> PatchState {
        PatchState { s: self.s.scale(c), i: self.i.scale(c), r: self.r.scale(c) }
    }

    /// Difference `self - other` componentwise.
    pub fn sub(&self, other: &PatchState) -> Result<PatchState> {
        Ok(PatchState {
            s: self.s.zip_with(&other.s, |a, b| a - b)?,
            i: self.i.zip_with(&other.i, |a, b| a - b)?,
            r: self.r.zip_with(&other.r, |a, b| a - b)?,
        })
    }

    /// Flat `(s_1..s_n, i_1..i_n, r_1..r_n)` vector.
    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(3 * self.grid().n_sites());
        v.extend_from_slice(self.s.values());
        v.extend_from_slice(self.i.values());
        v.extend_from_slice(self.r.values());
        v
    }

    fn has_nan(&self) -> bool {
        self.flat().iter().any(|v| !v.is_finite())
    }
}

/// Time-sampled trajectory of patch states.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<PatchState>,
}

impl Trajectory {
    pub fn validate(&self) -> Result<()> {
        if self.times.is_empty() || self.times[0] != 0.0 {
            return Err(Error::InvalidArgument("trajectory must start at t = 0".into()));
        }
        if !self.times.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidArgument("trajectory times must be increasing".into()));
        }
        Ok(())
    }
}

/// Reaction map with the `g+` regularization: with
/// `g = u+ v+ / (u+ + v+ + w+)` (0 when the denominator vanishes), returns
/// `(-beta g, beta g - alpha v, alpha v)`.
pub fn reaction_g(beta: f64, alpha: f64, u: f64, v: f64, w: f64) -> (f64, f64, f64) {
    let up = u.max(0.0);
    let vp = v.max(0.0);
    let wp = w.max(0.0);
    let denom = up + vp + wp;
    let g = if denom > 0.0 { up * vp / denom } else { 0.0 };
    let inf = beta * g;
    let rec = alpha * v;
    (-inf, inf - rec, rec)
}

/// Right-hand side `D~_eps X + G(.; X)` of the patch system.
pub fn rhs(rates: &DiscreteRates, params: &ModelParams, state: &PatchState) -> Result<PatchState> {
    if state.grid() != rates.grid {
        return Err(Error::GridMismatch("rhs state vs rates".into()));
    }
    let grid = state.grid();
    let mut ds = discrete_laplacian(&state.s).scale(params.mu_s);
    let mut di = discrete_laplacian(&state.i).scale(params.mu_i);
    let mut dr = discrete_laplacian(&state.r).scale(params.mu_r);
    for site in 0..grid.n_sites() {
        let (gs, gi, gr) = reaction_g(
            rates.beta[site],
            rates.alpha[site],
            state.s.values()[site],
            state.i.values()[site],
            state.r.values()[site],
        );
        ds.values_mut()[site] += gs;
        di.values_mut()[site] += gi;
        dr.values_mut()[site] += gr;
    }
    PatchState::new(ds, di, dr)
}

/// Diffusion CFL bound `eps^2 / (4 d mu_max)` for the explicit integrator.
pub fn rk4_stability_bound(grid: GridSpec, params: &ModelParams) -> f64 {
    let mu = params.mu_max();
    if mu == 0.0 {
        f64::INFINITY
    } else {
        grid.eps() * grid.eps() / (4.0 * grid.d() as f64 * mu)
    }
}

/// Default RK4 step: safety factor 2 under the diffusion CFL, capped at 1e-2.
pub fn default_rk4_dt(grid: GridSpec, params: &ModelParams) -> f64 {
    let mu = params.mu_max();
    let cfl = if mu == 0.0 {
        f64::INFINITY
    } else {
        grid.eps() * grid.eps() / (8.0 * grid.d() as f64 * mu)
    };
    cfl.min(1e-2)
}

/// Default exponential-integrator step.
pub const DEFAULT_EXP_DT: f64 = 1e-2;

/// Undershoot below this aborts an integration.
const UNDERSHOOT_ABORT: f64 = -1e-9;

#[derive(Debug, Clone, Copy)]
pub struct IntegrateOpts {
    /// Number of recorded sample intervals; `n_samples + 1` states including t = 0.
    pub n_samples: usize,
    /// Skip the diffusion CFL check (RK4 only).
    pub override_stability: bool,
}

impl Default for IntegrateOpts {
    fn default() -> Self {
        IntegrateOpts { n_samples: 64, override_stability: false }
    }
}

fn sample_layout(t_final: f64, dt: f64, n_samples: usize) -> Result<(usize, f64)> {
    if !(t_final > 0.0) {
        return Err(Error::InvalidArgument("horizon must be > 0".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument("dt must be > 0".into()));
    }
    let n_samples = n_samples.max(1);
    let h = t_final / n_samples as f64;
    let n_sub = (h / dt).ceil().max(1.0) as usize;
    Ok((n_sub, h / n_sub as f64))
}

fn check_state(state: &PatchState, step: usize, t: f64) -> Result<()> {
    if state.has_nan() {
        return Err(Error::IntegratorFailure {
            step,
            t,
            reason: "non-finite value (instability)".into(),
        });
    }
    let min = state.min_value();
    if min < UNDERSHOOT_ABORT {
        return Err(Error::IntegratorFailure {
            step,
            t,
            reason: format!("negative undershoot {min:.3e}"),
        });
    }
    Ok(())
}

/// Classical 4th-order Runge-Kutta integration of the patch system.
pub fn integrate_rk4(
    params: &ModelParams,
    x0: &PatchState,
    t_final: f64,
    dt: f64,
    opts: IntegrateOpts,
) -> Result<Trajectory> {
    let grid = x0.grid();
    let bound = rk4_stability_bound(grid, params);
    if dt > bound && !opts.override_stability {
        return Err(Error::InvalidArgument(format!(
            "dt = {dt} exceeds diffusion stability bound {bound:.3e} (set override to force)"
        )));
    }
    let rates = params.discretize(grid);
    let (n_sub, dt_eff) = sample_layout(t_final, dt, opts.n_samples)?;
    let n_samples = opts.n_samples.max(1);

    let mut state = x0.clone();
    let mut times = Vec::with_capacity(n_samples + 1);
    let mut states = Vec::with_capacity(n_samples + 1);
    times.push(0.0);
    states.push(state.clone());
    let mut step = 0usize;
    for sample in 1..=n_samples {
        for _ in 0..n_sub {
            let t = step as f64 * dt_eff;
            let k1 = rhs(&rates, params, &state)?;
            let mut y = state.clone();
            y.axpy(0.5 * dt_eff, &k1);
            let k2 = rhs(&rates, params, &y)?;
            let mut y = state.clone();
            y.axpy(0.5 * dt_eff, &k2);
            let k3 = rhs(&rates, params, &y)?;
            let mut y = state.clone();
            y.axpy(dt_eff, &k3);
            let k4 = rhs(&rates, params, &y)?;
            state.axpy(dt_eff / 6.0, &k1);
            state.axpy(dt_eff / 3.0, &k2);
            state.axpy(dt_eff / 3.0, &k3);
            state.axpy(dt_eff / 6.0, &k4);
            step += 1;
            check_state(&state, step, t + dt_eff)?;
        }
        times.push(sample as f64 * t_final / n_samples as f64);
        states.push(state.clone());
    }
    Ok(Trajectory { times, states })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LawsonScheme {
    /// `X' = T(dt)[X + dt G(X)]`.
    Euler,
    /// Heun variant, second order in dt.
    Heun,
}

/// Exponential (Lawson) integration: diffusion applied exactly through the
/// spectral semigroup, reaction stepped explicitly. No diffusion stability
/// restriction. The Heun variant is the default; it is second order in `dt`,
/// which the plain Lawson-Euler step needs to validate against RK4 at tight
/// tolerance.
pub fn integrate_exponential(
    params: &ModelParams,
    x0: &PatchState,
    t_final: f64,
    dt: f64,
    scheme: LawsonScheme,
    opts: IntegrateOpts,
) -> Result<Trajectory> {
    let grid = x0.grid();
    let rates = params.discretize(grid);
    let (n_sub, dt_eff) = sample_layout(t_final, dt, opts.n_samples)?;
    let n_samples = opts.n_samples.max(1);

    let op_s = SemigroupOperator::new(grid, params.mu_s * dt_eff)?;
    let op_i = SemigroupOperator::new(grid, params.mu_i * dt_eff)?;
    let op_r = SemigroupOperator::new(grid, params.mu_r * dt_eff)?;
    let apply = |x: &PatchState| -> Result<PatchState> {
        PatchState::new(op_s.apply(&x.s)?, op_i.apply(&x.i)?, op_r.apply(&x.r)?)
    };
    let reaction = |x: &PatchState| -> PatchState {
        let mut out = PatchState::zeros(grid);
        for site in 0..grid.n_sites() {
            let (gs, gi, gr) = reaction_g(
                rates.beta[site],
                rates.alpha[site],
                x.s.values()[site],
                x.i.values()[site],
                x.r.values()[site],
            );
            out.s.values_mut()[site] = gs;
            out.i.values_mut()[site] = gi;
            out.r.values_mut()[site] = gr;
        }
        out
    };

    let mut state = x0.clone();
    let mut times = Vec::with_capacity(n_samples + 1);
    let mut states = Vec::with_capacity(n_samples + 1);
    times.push(0.0);
    states.push(state.clone());
    let mut step = 0usize;
    for sample in 1..=n_samples {
        for _ in 0..n_sub {
            let t = step as f64 * dt_eff;
            let k1 = reaction(&state);
            let tx = apply(&state)?;
            let tk1 = apply(&k1)?;
            state = match scheme {
                LawsonScheme::Euler => {
                    let mut next = tx;
                    next.axpy(dt_eff, &tk1);
                    next
                }
                LawsonScheme::Heun => {
                    let mut predictor = tx.clone();
                    predictor.axpy(dt_eff, &tk1);
                    let k2 = reaction(&predictor);
                    let mut next = tx;
                    next.axpy(0.5 * dt_eff, &tk1);
                    next.axpy(0.5 * dt_eff, &k2);
                    next
                }
            };
            step += 1;
            check_state(&state, step, t + dt_eff)?;
        }
        times.push(sample as f64 * t_final / n_samples as f64);
        states.push(state.clone());
    }
    Ok(Trajectory { times, states })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, Boundary};

    fn constant(v: f64) -> SpatialFn {
        SpatialFn::Constant { value: v }
    }

    fn params(beta: f64, alpha: f64, mu: f64) -> ModelParams {
        ModelParams {
            beta: constant(beta),
            alpha: constant(alpha),
            mu_s: mu,
            mu_i: mu,
            mu_r: mu,
        }
    }

    fn sir_state(grid: GridSpec) -> PatchState {
        let i0 = SpatialFn::GaussianBump {
            center: vec![0.5; grid.d()],
            width: 0.1,
            base: 0.0,
            peak: 0.5,
        };
        let s0 = constant(1.0);
        let r0 = constant(0.0);
        PatchState::project(grid, &s0, &i0, &r0)
    }

    #[test]
    fn reaction_examples() {
        assert_eq!(reaction_g(1.0, 1.0, 0.5, 0.5, 0.0), (-0.25, -0.25, 0.5));
        assert_eq!(reaction_g(2.0, 3.0, 0.7, 0.0, 0.1), (0.0, 0.0, 0.0));
        assert_eq!(reaction_g(1.0, 1.0, 0.0, 0.0, 0.0), (0.0, 0.0, 0.0));
    }

    #[test]
    fn rhs_equilibrium_and_pure_diffusion() {
        let g = build_grid(2, 4, Boundary::Neumann).unwrap();
        // constant state, v = 0: equilibrium
        let p = params(1.3, 0.7, 0.2);
        let x = PatchState::new(
            Field::constant(g, 0.8),
            Field::constant(g, 0.0),
            Field::constant(g, 0.2),
        )
        .unwrap();
        let t = rhs(&p.discretize(g), &p, &x).unwrap();
        assert!(t.sup_norm_triple() <= 1e-12);

        // beta = alpha = 0: pure diffusion
        let p0 = params(0.0, 0.0, 0.3);
        let x = sir_state(g);
        let t = rhs(&p0.discretize(g), &p0, &x).unwrap();
        let lap_i = discrete_laplacian(&x.i).scale(0.3);
        for (a, b) in t.i.values().iter().zip(lap_i.values()) {
            assert!((a - b).abs() <= 1e-13);
        }
    }

    #[test]
    fn rhs_conserves_mass() {
        let g = build_grid(2, 8, Boundary::Neumann).unwrap();
        let p = ModelParams {
            beta: SpatialFn::GaussianBump {
                center: vec![0.3, 0.6],
                width: 0.2,
                base: 0.5,
                peak: 1.0,
            },
            alpha: constant(0.9),
            mu_s: 0.1,
            mu_i: 0.25,
            mu_r: 0.05,
        };
        let x = sir_state(g);
        let t = rhs(&p.discretize(g), &p, &x).unwrap();
        assert!(t.mass().abs() <= 1e-12);
    }

    #[test]
    fn rk4_constant_when_frozen() {
        let g = build_grid(1, 4, Boundary::Neumann).unwrap();
        let p = params(0.0, 0.5, 0.0);
        let x0 = PatchState::new(
            Field::constant(g, 1.0),
            Field::zeros(g),
            Field::zeros(g),
        )
        .unwrap();
        let traj = integrate_rk4(&p, &x0, 1.0, 1e-2, IntegrateOpts::default()).unwrap();
        for state in &traj.states {
            assert_eq!(state, &x0);
        }
    }

    #[test]
    fn rk4_exponential_decay_single_site() {
        // mu = 0, beta = 0: i(t) = i0 exp(-alpha t).
        let g = build_grid(1, 1, Boundary::Neumann).unwrap();
        let alpha = 1.3;
        let p = params(0.0, alpha, 0.0);
        let x0 = PatchState::new(
            Field::zeros(g),
            Field::constant(g, 0.7),
            Field::zeros(g),
        )
        .unwrap();
        let traj = integrate_rk4(&p, &x0, 1.0, 1e-3, IntegrateOpts::default()).unwrap();
        let i1 = traj.states.last().unwrap().i.values()[0];
        let exact = 0.7 * (-alpha_t(alpha)).exp();
        assert!((i1 - exact).abs() / exact <= 1e-8);
        fn alpha_t(a: f64) -> f64 {
            a * 1.0
        }
    }

    #[test]
    fn rk4_mass_conservation_and_positivity() {
        let g = build_grid(2, 8, Boundary::Neumann).unwrap();
        let p = params(1.5, 1.0, 0.1);
        let x0 = sir_state(g);
        let dt = default_rk4_dt(g, &p);
        let traj = integrate_rk4(&p, &x0, 10.0, dt, IntegrateOpts::default()).unwrap();
        let m0 = x0.mass();
        for state in &traj.states {
            assert!((state.mass() - m0).abs() <= 1e-10);
            assert!(state.min_value() >= -1e-9);
        }
    }

    #[test]
    fn rk4_rejects_unstable_dt() {
        let g = build_grid(2, 16, Boundary::Neumann).unwrap();
        let p = params(1.0, 1.0, 1.0);
        let x0 = sir_state(g);
        assert!(integrate_rk4(&p, &x0, 1.0, 1e-2, IntegrateOpts::default()).is_err());
    }

    #[test]
    fn exponential_matches_semigroup_when_reaction_off() {
        let g = build_grid(1, 8, Boundary::Neumann).unwrap();
        let p = params(0.0, 0.0, 0.4);
        let x0 = sir_state(g);
        let traj = integrate_exponential(
            &p,
            &x0,
            1.0,
            0.25,
            LawsonScheme::Heun,
            IntegrateOpts { n_samples: 4, override_stability: false },
        )
        .unwrap();
        let exact = crate::spectral::semigroup_apply(&x0.i, 1.0, 0.4).unwrap();
        let got = &traj.states.last().unwrap().i;
        for (a, b) in got.values().iter().zip(exact.values()) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn integrators_agree() {
        let g = build_grid(1, 16, Boundary::Neumann).unwrap();
        let p = params(1.5, 1.0, 0.1);
        let x0 = sir_state(g);
        let opts = IntegrateOpts { n_samples: 32, override_stability: false };
        let a = integrate_rk4(&p, &x0, 5.0, 1e-3, opts).unwrap();
        let b = integrate_exponential(&p, &x0, 5.0, 1e-3, LawsonScheme::Heun, opts).unwrap();
        let mut gap: f64 = 0.0;
        for (xa, xb) in a.states.iter().zip(&b.states) {
            gap = gap.max(xa.sub(xb).unwrap().sup_norm_triple());
        }
        assert!(gap <= 1e-4, "cross-integrator gap {gap}");
    }

    #[test]
    fn exponential_positivity_over_scenarios() {
        let g = build_grid(1, 8, Boundary::Neumann).unwrap();
        for (beta, alpha, mu) in [(1.5, 1.0, 0.1), (0.0, 0.0, 0.5), (3.0, 0.5, 0.0)] {
            let p = params(beta, alpha, mu);
            let x0 = sir_state(g);
            let traj =
                integrate_exponential(&p, &x0, 3.0, 1e-2, LawsonScheme::Heun, IntegrateOpts::default())
                    .unwrap();
            for state in &traj.states {
                assert!(state.min_value() >= -1e-9);
            }
        }
    }

    #[test]
    fn rk4_self_convergence_order() {
        // Order >= 3.5 by dt halving on a smooth scenario.
        let g = build_grid(1, 8, Boundary::Neumann).unwrap();
        let p = params(1.5, 1.0, 0.05);
        let x0 = sir_state(g);
        let opts = IntegrateOpts { n_samples: 1, override_stability: false };
        let run = |dt: f64| {
            integrate_rk4(&p, &x0, 1.0, dt, opts)
                .unwrap()
                .states
                .last()
                .unwrap()
                .clone()
        };
        let fine = run(1.0 / 1024.0);
        let e1 = run(1.0 / 32.0).sub(&fine).unwrap().sup_norm_triple();
        let e2 = run(1.0 / 64.0).sub(&fine).unwrap().sup_norm_triple();
        let order = (e1 / e2).log2();
        assert!(order >= 3.5, "observed order {order}");
    }

    #[test]
    fn decoupled_heat_flow_when_beta_zero() {
        // beta = 0, alpha = 0: each component is a pure heat flow.
        let g = build_grid(1, 8, Boundary::Neumann).unwrap();
        let p = params(0.0, 0.0, 0.3);
        let x0 = sir_state(g);
        let traj = integrate_rk4(&p, &x0, 1.0, 1e-3, IntegrateOpts::default()).unwrap();
        let exact_s = crate::spectral::semigroup_apply(&x0.s, 1.0, 0.3).unwrap();
        let exact_r = crate::spectral::semigroup_apply(&x0.r, 1.0, 0.3).unwrap();
        let last = traj.states.last().unwrap();
        for (a, b) in last.s.values().iter().zip(exact_s.values()) {
            assert!((a - b).abs() <= 1e-8);
        }
        for (a, b) in last.r.values().iter().zip(exact_r.values()) {
            assert!((a - b).abs() <= 1e-8);
        }
    }

    #[test]
    fn sup_bound_stays_controlled() {
        let g = build_grid(1, 8, Boundary::Neumann).unwrap();
        // pure diffusion: never exceeds 1.05x initial sup
        let p = params(0.0, 0.0, 0.2);
        let x0 = sir_state(g);
        let s0 = x0.sup_norm_triple();
        let traj = integrate_rk4(&p, &x0, 5.0, 1e-3, IntegrateOpts::default()).unwrap();
        for state in &traj.states {
            assert!(state.sup_norm_triple() <= 1.05 * s0);
        }
        // SIR scenario: stays finite (< 10x initial)
        let p = params(1.5, 1.0, 0.1);
        let traj = integrate_rk4(&p, &x0, 10.0, 1e-3, IntegrateOpts::default()).unwrap();
        for state in &traj.states {
            assert!(state.sup_norm_triple() < 10.0 * s0);
        }
    }
}
