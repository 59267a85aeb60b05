//! Exact event-driven simulation of the spatial SIR jump process.
//!
//! Gillespie direct method over one channel per site for infection and
//! recovery plus one channel per directed migration edge per compartment.
//! Channel rates live in a Fenwick (sum) tree, so waiting-time draws and
//! channel selection are O(log n) and an event touches only the O(d) channels
//! whose rates actually change.

use crate::error::{Error, Result};
use crate::grid::{Field, GridSpec, Link};
use crate::patch::{rhs, DiscreteRates, ModelParams, PatchState, SpatialFn};
use crate::rng::{exponential, uniform_f64, SimRng};

/// Compartment tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Compartment {
    S = 0,
    I = 1,
    R = 2,
}

/// What a channel does when it fires.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Infection { site: usize },
    Recovery { site: usize },
    Migration { compartment: Compartment, from: usize, to: usize },
}

/// Integer individual counts per site.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountsState {
    pub grid: GridSpec,
    pub s: Vec<u64>,
    pub i: Vec<u64>,
    pub r: Vec<u64>,
    /// Scale parameter N: initial mean number of individuals per site.
    pub n_scale: u64,
}

impl CountsState {
    pub fn total(&self) -> u64 {
        self.s.iter().sum::<u64>() + self.i.iter().sum::<u64>() + self.r.iter().sum::<u64>()
    }

    /// Renormalized density fields: site value `count / N`. The step function
    /// with these values integrates to `total / (N eps^-d)`, i.e. exactly 1
    /// for the standard initial condition, and is directly comparable with
    /// patch-model densities.
    pub fn renormalized(&self) -> PatchState {
        let n = self.n_scale as f64;
        let to_field = |counts: &[u64]| {
            Field::new(self.grid, counts.iter().map(|&c| c as f64 / n).collect()).expect("sized")
        };
        PatchState {
            s: to_field(&self.s),
            i: to_field(&self.i),
            r: to_field(&self.r),
        }
    }
}

/// Draw the initial condition: `N * eps^-d` individuals placed i.i.d. over the
/// `3 eps^-d` (compartment, site) categories with probabilities given by the
/// cell integrals of the three densities.
pub fn sample_initial(
    n_scale: u64,
    grid: GridSpec,
    s0: &SpatialFn,
    i0: &SpatialFn,
    r0: &SpatialFn,
    rng: &mut SimRng,
) -> Result<CountsState> {
    let probs = cell_probabilities(grid, s0, i0, r0)?;
    let n_sites = grid.n_sites();
    let mut cum = Vec::with_capacity(3 * n_sites);
    let mut acc = 0.0;
    for &p in &probs {
        acc += p;
        cum.push(acc);
    }
    let total_mass = acc;
    let individuals = n_scale
        .checked_mul(n_sites as u64)
        .ok_or_else(|| Error::Simulation("N * eps^-d overflows".into()))?;
    let mut state = CountsState {
        grid,
        s: vec![0; n_sites],
        i: vec![0; n_sites],
        r: vec![0; n_sites],
        n_scale,
    };
    for _ in 0..individuals {
        let u = uniform_f64(rng) * total_mass;
        let k = cum.partition_point(|&c| c <= u).min(3 * n_sites - 1);
        let (comp, site) = (k / n_sites, k % n_sites);
        match comp {
            0 => state.s[site] += 1,
            1 => state.i[site] += 1,
            _ => state.r[site] += 1,
        }
    }
    Ok(state)
}

/// Deterministic initial condition: `count = round(N eps^d density)` per
/// category. Total count equals the rounded sum, not necessarily `N eps^-d`.
pub fn deterministic_initial(
    n_scale: u64,
    grid: GridSpec,
    s0: &SpatialFn,
    i0: &SpatialFn,
    r0: &SpatialFn,
) -> Result<CountsState> {
    let probs = cell_probabilities(grid, s0, i0, r0)?;
    let n_sites = grid.n_sites();
    let expected = |p: f64| (p * (n_scale as f64) * n_sites as f64).round() as u64;
    Ok(CountsState {
        grid,
        s: probs[..n_sites].iter().map(|&p| expected(p)).collect(),
        i: probs[n_sites..2 * n_sites].iter().map(|&p| expected(p)).collect(),
        r: probs[2 * n_sites..].iter().map(|&p| expected(p)).collect(),
        n_scale,
    })
}

/// Cell placement probabilities `(int_Vi s0, int_Vi i0, int_Vi r0)` flattened
/// compartment-major.
pub fn cell_probabilities(
    grid: GridSpec,
    s0: &SpatialFn,
    i0: &SpatialFn,
    r0: &SpatialFn,
) -> Result<Vec<f64>> {
    let x0 = PatchState::project(grid, s0, i0, r0);
    let vol = grid.cell_volume();
    let mut probs = Vec::with_capacity(3 * grid.n_sites());
    for field in [&x0.s, &x0.i, &x0.r] {
        for &v in field.values() {
            if v < -1e-12 {
                return Err(Error::Validation(format!("negative initial density {v}")));
            }
            probs.push(vol * v.max(0.0));
        }
    }
    Ok(probs)
}

/// Fenwick tree over channel rates with cached total.
///
/// The cached total drifts by floating-point increments; it is re-synchronized
/// by a full rebuild every `REBUILD_INTERVAL` events and must then agree with
/// the freshly summed rates to 1e-9 relative.
pub struct RateIndex {
    leaves: Vec<f64>,
    tree: Vec<f64>, // 1-based Fenwick array
    total: f64,
    mask: usize, // highest power of two <= len
}

impl RateIndex {
    pub fn new(leaves: Vec<f64>) -> Self {
        let n = leaves.len();
        let mut idx = RateIndex {
            leaves,
            tree: vec![0.0; n + 1],
            total: 0.0,
            mask: n.next_power_of_two(),
        };
        if idx.mask > n {
            idx.mask /= 2;
        }
        idx.rebuild();
        idx
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn total_rate(&self) -> f64 {
        self.total
    }

    pub fn rate(&self, channel: usize) -> f64 {
        self.leaves[channel]
    }

    /// Recompute the tree and total from the leaves.
    pub fn rebuild(&mut self) {
        let n = self.leaves.len();
        for v in self.tree.iter_mut() {
            *v = 0.0;
        }
        for i in 0..n {
            let mut j = i + 1;
            while j <= n {
                self.tree[j] += self.leaves[i];
                j += j & j.wrapping_neg();
            }
        }
        self.total = self.leaves.iter().sum();
    }

    pub fn set(&mut self, channel: usize, rate: f64) {
        debug_assert!(rate >= 0.0 && rate.is_finite(), "channel rate {rate}");
        let delta = rate - self.leaves[channel];
        if delta == 0.0 {
            return;
        }
        self.leaves[channel] = rate;
        self.total += delta;
        let mut j = channel + 1;
        while j <= self.leaves.len() {
            self.tree[j] += delta;
            j += j & j.wrapping_neg();
        }
    }

    /// Channel with cumulative rate bracketing `u` in `[0, total)`.
    pub fn select(&self, u: f64) -> usize {
        let mut pos = 0usize;
        let mut rem = u;
        let mut step = self.mask;
        while step > 0 {
            let next = pos + step;
            if next <= self.leaves.len() && self.tree[next] < rem {
                rem -= self.tree[next];
                pos = next;
            }
            step /= 2;
        }
        pos.min(self.leaves.len() - 1)
    }

    /// Freshly summed rates, for consistency checks.
    pub fn summed_total(&self) -> f64 {
        self.leaves.iter().sum()
    }
}

/// Directed migration edges of a grid. Under Neumann boundary no channel
/// crosses the boundary (closed environment); under periodic boundary edges
/// wrap.
#[derive(Debug, Clone)]
pub struct EdgeList {
    /// `(from, to)` per directed edge.
    pub edges: Vec<(usize, usize)>,
    /// Outgoing edge indices per site.
    pub out_edges: Vec<Vec<usize>>,
}

pub fn build_edges(grid: GridSpec) -> EdgeList {
    let n = grid.n_sites();
    let mut edges = Vec::new();
    let mut out_edges = vec![Vec::new(); n];
    for site in 0..n {
        for axis in 0..grid.d() {
            for sign in [-1i8, 1] {
                match grid.neighbor(site, axis, sign) {
                    Link::Interior(to) | Link::Wrapped(to) => {
                        out_edges[site].push(edges.len());
                        edges.push((site, to));
                    }
                    Link::Ghost => {}
                }
            }
        }
    }
    EdgeList { edges, out_edges }
}

/// Exact conservation is asserted every `2^16` events; the rate index is
/// rebuilt every `2^20`.
const CONSERVATION_CHECK_INTERVAL: u64 = 1 << 16;
const REBUILD_INTERVAL: u64 = 1 << 20;
const REBUILD_RELATIVE_TOL: f64 = 1e-9;

/// One running stochastic simulation: state, channel rates and clock.
pub struct Simulation {
    grid: GridSpec,
    state: CountsState,
    rates: DiscreteRates,
    mu_over_eps2: [f64; 3],
    edges: EdgeList,
    index: RateIndex,
    t: f64,
    event_count: u64,
    initial_total: u64,
}

impl Simulation {
    pub fn new(state: CountsState, params: &ModelParams) -> Result<Self> {
        params.validate()?;
        let grid = state.grid;
        let rates = params.discretize(grid);
        let eps2 = grid.eps() * grid.eps();
        let mu_over_eps2 = [params.mu_s / eps2, params.mu_i / eps2, params.mu_r / eps2];
        let edges = build_edges(grid);
        let initial_total = state.total();
        let mut sim = Simulation {
            grid,
            state,
            rates,
            mu_over_eps2,
            edges,
            index: RateIndex::new(vec![]),
            t: 0.0,
            event_count: 0,
            initial_total,
        };
        sim.index = RateIndex::new(sim.all_rates()?);
        Ok(sim)
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn event_count(&self) -> u64 {
        self.event_count
    }

    pub fn state(&self) -> &CountsState {
        &self.state
    }

    pub fn rate_index(&self) -> &RateIndex {
        &self.index
    }

    /// Channel layout: `[infection per site | recovery per site | migration
    /// per (compartment, source site)]`. A migration channel aggregates all
    /// outgoing edges of its site (the rates are equal), and the target edge
    /// is drawn uniformly when the channel fires.
    pub fn n_channels(&self) -> usize {
        5 * self.grid.n_sites()
    }

    pub fn kind_of_channel(&self, channel: usize, rng: &mut SimRng) -> EventKind {
        let n = self.grid.n_sites();
        if channel < n {
            EventKind::Infection { site: channel }
        } else if channel < 2 * n {
            EventKind::Recovery { site: channel - n }
        } else {
            let m = channel - 2 * n;
            let comp = match m / n {
                0 => Compartment::S,
                1 => Compartment::I,
                _ => Compartment::R,
            };
            let from = m % n;
            let out = &self.edges.out_edges[from];
            let pick = ((uniform_f64(rng) * out.len() as f64) as usize).min(out.len() - 1);
            let (_, to) = self.edges.edges[out[pick]];
            EventKind::Migration { compartment: comp, from, to }
        }
    }

    fn infection_rate(&self, site: usize) -> f64 {
        let s = self.state.s[site] as f64;
        let i = self.state.i[site] as f64;
        let total = s + i + self.state.r[site] as f64;
        if total > 0.0 {
            self.rates.beta[site] * s * i / total
        } else {
            0.0
        }
    }

    fn recovery_rate(&self, site: usize) -> f64 {
        self.rates.alpha[site] * self.state.i[site] as f64
    }

    /// Total outgoing migration rate of a (compartment, site) channel:
    /// `out_degree * mu / eps^2 * count`.
    fn migration_rate(&self, comp: usize, from: usize) -> f64 {
        let count = match comp {
            0 => self.state.s[from],
            1 => self.state.i[from],
            _ => self.state.r[from],
        };
        self.edges.out_edges[from].len() as f64 * self.mu_over_eps2[comp] * count as f64
    }

    fn all_rates(&self) -> Result<Vec<f64>> {
        let n = self.grid.n_sites();
        let mut rates = Vec::with_capacity(5 * n);
        for site in 0..n {
            rates.push(self.infection_rate(site));
        }
        for site in 0..n {
            rates.push(self.recovery_rate(site));
        }
        for comp in 0..3 {
            for site in 0..n {
                rates.push(self.migration_rate(comp, site));
            }
        }
        for &r in &rates {
            if !r.is_finite() {
                return Err(Error::Simulation(format!("channel rate overflow: {r}")));
            }
        }
        Ok(rates)
    }

    /// Re-push the rates of the channels of `site` affected by a change in the
    /// given compartments (`changed` indexed S, I, R).
    fn refresh_site(&mut self, site: usize, changed: [bool; 3]) {
        let n = self.grid.n_sites();
        // infection depends on all three counts
        self.index.set(site, self.infection_rate(site));
        if changed[1] {
            self.index.set(n + site, self.recovery_rate(site));
        }
        for comp in 0..3 {
            if changed[comp] {
                self.index.set(2 * n + comp * n + site, self.migration_rate(comp, site));
            }
        }
    }

    /// One Gillespie step: returns the fired event and its waiting time, or
    /// `None` if the state is absorbed (total rate zero).
    pub fn step(&mut self, rng: &mut SimRng) -> Result<Option<(EventKind, f64)>> {
        let total = self.index.total_rate();
        if total <= 0.0 {
            return Ok(None);
        }
        let dt = exponential(rng, total);
        let channel = self.index.select(uniform_f64(rng) * total);
        let kind = self.kind_of_channel(channel, rng);
        self.apply(kind)?;
        self.t += dt;
        self.event_count += 1;
        if self.event_count % CONSERVATION_CHECK_INTERVAL == 0 {
            self.assert_conserved()?;
        }
        if self.event_count % REBUILD_INTERVAL == 0 {
            let drifted = self.index.total_rate();
            self.index.rebuild();
            let fresh = self.index.total_rate();
            let scale = fresh.abs().max(1.0);
            if (drifted - fresh).abs() > REBUILD_RELATIVE_TOL * scale {
                return Err(Error::Simulation(format!(
                    "rate index drift {drifted} vs {fresh}"
                )));
            }
        }
        Ok(Some((kind, dt)))
    }

    fn apply(&mut self, kind: EventKind) -> Result<()> {
        match kind {
            EventKind::Infection { site } => {
                debug_assert!(self.state.s[site] > 0);
                self.state.s[site] -= 1;
                self.state.i[site] += 1;
                self.refresh_site(site, [true, true, false]);
            }
            EventKind::Recovery { site } => {
                debug_assert!(self.state.i[site] > 0);
                self.state.i[site] -= 1;
                self.state.r[site] += 1;
                self.refresh_site(site, [false, true, true]);
            }
            EventKind::Migration { compartment, from, to } => {
                let comp = compartment as usize;
                let counts = match comp {
                    0 => &mut self.state.s,
                    1 => &mut self.state.i,
                    _ => &mut self.state.r,
                };
                debug_assert!(counts[from] > 0);
                counts[from] -= 1;
                counts[to] += 1;
                let mut changed = [false; 3];
                changed[comp] = true;
                self.refresh_site(from, changed);
                self.refresh_site(to, changed);
            }
        }
        Ok(())
    }

    pub fn assert_conserved(&self) -> Result<()> {
        let total = self.state.total();
        if total != self.initial_total {
            return Err(Error::Simulation(format!(
                "total count changed: {total} vs initial {}",
                self.initial_total
            )));
        }
        Ok(())
    }
}

/// Recorded output of one stochastic run.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub times: Vec<f64>,
    /// Renormalized density triples (site value `count / N`).
    pub states: Vec<PatchState>,
    pub event_count: u64,
}

/// Initial-condition mode for [`simulate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    Multinomial,
    DeterministicRound,
}

/// Run the jump process to the horizon, recording the renormalized state at
/// each sample time. Reproducible given the RNG stream.
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    n_scale: u64,
    params: &ModelParams,
    grid: GridSpec,
    s0: &SpatialFn,
    i0: &SpatialFn,
    r0: &SpatialFn,
    t_final: f64,
    sample_times: &[f64],
    init_mode: InitMode,
    rng: &mut SimRng,
) -> Result<SimOutput> {
    if !(t_final > 0.0) {
        return Err(Error::InvalidArgument("horizon must be > 0".into()));
    }
    if sample_times.iter().any(|&t| !(0.0..=t_final).contains(&t)) {
        return Err(Error::InvalidArgument("sample times must lie in [0, T]".into()));
    }
    if !sample_times.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::InvalidArgument("sample times must be increasing".into()));
    }
    let initial = match init_mode {
        InitMode::Multinomial => sample_initial(n_scale, grid, s0, i0, r0, rng)?,
        InitMode::DeterministicRound => deterministic_initial(n_scale, grid, s0, i0, r0)?,
    };
    let mut sim = Simulation::new(initial, params)?;
    let mut times = Vec::with_capacity(sample_times.len());
    let mut states = Vec::with_capacity(sample_times.len());
    let mut next = 0usize;
    loop {
        let total = sim.index.total_rate();
        if total <= 0.0 {
            // absorbed: state is frozen to the horizon
            while next < sample_times.len() {
                times.push(sample_times[next]);
                states.push(sim.state.renormalized());
                next += 1;
            }
            break;
        }
        let dt = exponential(rng, total);
        let t_next = sim.t + dt;
        while next < sample_times.len() && sample_times[next] < t_next {
            times.push(sample_times[next]);
            states.push(sim.state.renormalized());
            next += 1;
        }
        if t_next > t_final {
            while next < sample_times.len() {
                times.push(sample_times[next]);
                states.push(sim.state.renormalized());
                next += 1;
            }
            break;
        }
        let channel = sim.index.select(uniform_f64(rng) * total);
        let kind = sim.kind_of_channel(channel, rng);
        sim.apply(kind)?;
        sim.t = t_next;
        sim.event_count += 1;
        if sim.event_count % CONSERVATION_CHECK_INTERVAL == 0 {
            sim.assert_conserved()?;
        }
        if sim.event_count % REBUILD_INTERVAL == 0 {
            let drifted = sim.index.total_rate();
            sim.index.rebuild();
            let fresh = sim.index.total_rate();
            if (drifted - fresh).abs() > REBUILD_RELATIVE_TOL * fresh.abs().max(1.0) {
                return Err(Error::Simulation(format!(
                    "rate index drift {drifted} vs {fresh}"
                )));
            }
        }
    }
    sim.assert_conserved()?;
    Ok(SimOutput { times, states, event_count: sim.event_count })
}

/// Minimum number of sample points for the compensated-martingale quadrature.
pub const MARTINGALE_MIN_SAMPLES: usize = 256;

/// Compensated martingale path `M(t) = Z(t) - Z(0) - int_0^t b_eps(Z(r)) dr`,
/// with the drift `b_eps = D~_eps Z + G(Z)` integrated by trapezoid quadrature
/// on the recorded sample grid.
pub fn compensated_martingale(
    output: &SimOutput,
    params: &ModelParams,
) -> Result<Vec<PatchState>> {
    if output.times.len() < MARTINGALE_MIN_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "martingale extraction needs >= {MARTINGALE_MIN_SAMPLES} samples, got {}",
            output.times.len()
        )));
    }
    let grid = output.states[0].grid();
    let rates = params.discretize(grid);
    let drifts: Vec<PatchState> = output
        .states
        .iter()
        .map(|z| rhs(&rates, params, z))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(output.times.len());
    let mut integral = PatchState::zeros(grid);
    for k in 0..output.times.len() {
        if k > 0 {
            let h = output.times[k] - output.times[k - 1];
            integral.axpy(0.5 * h, &drifts[k - 1]);
            integral.axpy(0.5 * h, &drifts[k]);
        }
        let mut m = output.states[k].sub(&output.states[0])?;
        m.axpy(-1.0, &integral);
        out.push(m);
    }
    Ok(out)
}

/// Uniform sample times `0, T/n, ..., T`.
pub fn uniform_sample_times(t_final: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|k| k as f64 * t_final / n as f64).collect()
}
