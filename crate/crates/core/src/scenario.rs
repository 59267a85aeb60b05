//! Scenario files and run manifests. Scenario parsing is fail-closed: unknown
//! keys and schema-version mismatches are errors, and every validation failure
//! names the offending field.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{build_grid, project, Boundary, GridSpec};
use crate::patch::{ModelParams, SpatialFn};
use crate::rng::replica_seed;

pub const SCHEMA_VERSION: u32 = 1;

/// Quadrature resolution used when measuring the mass of initial data.
const NORMALIZATION_INV_EPS: usize = 128;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    pub d: usize,
    pub inv_eps: usize,
    pub boundary: Boundary,
    pub params: ModelParams,
    pub s0: SpatialFn,
    pub i0: SpatialFn,
    pub r0: SpatialFn,
    pub t_final: f64,
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    /// Population scale N for stochastic runs; deterministic runs ignore it.
    #[serde(default)]
    pub n_scale: Option<f64>,
}

fn default_n_samples() -> usize {
    64
}

impl Scenario {
    pub fn grid(&self) -> Result<GridSpec> {
        build_grid(self.d, self.inv_eps, self.boundary)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Validation(format!(
                "schema_version: expected {SCHEMA_VERSION}, got {}",
                self.schema_version
            )));
        }
        self.grid()
            .map_err(|e| Error::Validation(format!("d/inv_eps/boundary: {e}")))?;
        self.params
            .validate()
            .map_err(|e| Error::Validation(format!("params: {e}")))?;
        if !(self.t_final > 0.0) {
            return Err(Error::Validation(format!(
                "t_final: must be > 0, got {}",
                self.t_final
            )));
        }
        if self.n_samples < 2 {
            return Err(Error::Validation(format!(
                "n_samples: must be >= 2, got {}",
                self.n_samples
            )));
        }
        if let Some(n) = self.n_scale {
            if !(n > 0.0) {
                return Err(Error::Validation(format!("n_scale: must be > 0, got {n}")));
            }
        }
        for (name, f) in [("s0", &self.s0), ("i0", &self.i0), ("r0", &self.r0)] {
            if f.inf() < 0.0 {
                return Err(Error::Validation(format!("{name}: must be >= 0 on D")));
            }
            self.check_dim(name, f)?;
        }
        for (name, f) in [("params.beta", &self.params.beta), ("params.alpha", &self.params.alpha)]
        {
            self.check_dim(name, f)?;
        }
        Ok(())
    }

    fn check_dim(&self, name: &str, f: &SpatialFn) -> Result<()> {
        let ok = match f {
            SpatialFn::Constant { .. } => true,
            SpatialFn::GaussianBump { center, .. } => center.len() == self.d,
            SpatialFn::Raster { grid, .. } => grid.d() == self.d,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!("{name}: dimension does not match d = {}", self.d)))
        }
    }

    /// Integral of `s0 + i0 + r0` over the unit box, by high-order quadrature
    /// on a fine auxiliary mesh.
    pub fn initial_mass(&self) -> Result<f64> {
        let inv = NORMALIZATION_INV_EPS.max(self.inv_eps);
        let aux = build_grid(self.d, inv, Boundary::Neumann)?;
        let d = self.d;
        let total = project(
            |x: &[f64]| self.s0.eval(&x[..d]) + self.i0.eval(&x[..d]) + self.r0.eval(&x[..d]),
            aux,
            5,
        );
        Ok(total.mass())
    }

    /// Rescale the initial data so the three components integrate to one.
    /// Returns the applied factor (1.0 when already normalized).
    pub fn normalize(&mut self) -> Result<f64> {
        let mass = self.initial_mass()?;
        if !(mass > 0.0) {
            return Err(Error::Validation(format!(
                "s0/i0/r0: total initial mass must be > 0, got {mass}"
            )));
        }
        let factor = 1.0 / mass;
        if (factor - 1.0).abs() <= 1e-12 {
            return Ok(1.0);
        }
        self.s0 = self.s0.scaled(factor);
        self.i0 = self.i0.scaled(factor);
        self.r0 = self.r0.scaled(factor);
        Ok(factor)
    }
}

/// A validated scenario plus the normalization that was applied on load.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub normalization_factor: f64,
}

pub fn parse_scenario(text: &str) -> Result<LoadedScenario> {
    let mut scenario: Scenario =
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("scenario: {e}")))?;
    scenario.validate()?;
    let normalization_factor = scenario.normalize()?;
    Ok(LoadedScenario { scenario, normalization_factor })
}

pub fn load_scenario(path: &Path) -> Result<LoadedScenario> {
    let text = std::fs::read_to_string(path)?;
    parse_scenario(&text)
}

/// FNV-1a over the canonical JSON serialization; stable across platforms and
/// releases, unlike the std hasher.
pub fn scenario_hash(scenario: &Scenario) -> String {
    let bytes = serde_json::to_vec(scenario).expect("scenario serializes");
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// Everything needed to reproduce a run. Written as JSON next to the data
/// files; wall-clock metadata lives only here so the data files stay
/// byte-stable across reruns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub scenario_name: String,
    pub scenario_hash: String,
    pub normalization_factor: f64,
    pub base_seed: u64,
    pub replicas: usize,
    pub replica_seeds: Vec<u64>,
    pub threads: usize,
    pub created_unix: u64,
}

impl RunManifest {
    pub fn new(
        command: &str,
        loaded: &LoadedScenario,
        base_seed: u64,
        replicas: usize,
        threads: usize,
    ) -> Self {
        let created_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            scenario_name: loaded.scenario.name.clone(),
            scenario_hash: scenario_hash(&loaded.scenario),
            normalization_factor: loaded.normalization_factor,
            base_seed,
            replicas,
            replica_seeds: (0..replicas as u64).map(|k| replica_seed(base_seed, k)).collect(),
            threads,
            created_unix,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

/// The baseline epidemic scenario used across the built-in studies: uniform
/// susceptibles, a centered Gaussian pocket of infection, no removed mass.
pub fn baseline_scenario(d: usize, inv_eps: usize) -> Scenario {
    Scenario {
        schema_version: SCHEMA_VERSION,
        name: format!("baseline-{d}d"),
        d,
        inv_eps,
        boundary: Boundary::Neumann,
        params: ModelParams {
            beta: SpatialFn::Constant { value: 1.5 },
            alpha: SpatialFn::Constant { value: 1.0 },
            mu_s: 0.1,
            mu_i: 0.1,
            mu_r: 0.1,
        },
        s0: SpatialFn::Constant { value: 0.95 },
        i0: SpatialFn::GaussianBump {
            center: vec![0.5; d],
            width: 0.1,
            base: 0.0,
            peak: 0.05 / (0.1 * (2.0 * std::f64::consts::PI).sqrt()).powi(d as i32),
        },
        r0: SpatialFn::Constant { value: 0.0 },
        t_final: 5.0,
        n_samples: 64,
        n_scale: Some(1000.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn baseline_round_trips_and_validates() {
        let mut sc = baseline_scenario(1, 8);
        let text = serde_json::to_string(&sc).unwrap();
        let loaded = parse_scenario(&text).unwrap();
        assert_eq!(loaded.scenario.name, "baseline-1d");
        // initial mass is not exactly 1 (Gaussian tails), so a factor applies
        assert!((loaded.normalization_factor - 1.0).abs() < 0.1);
        let factor = sc.normalize().unwrap();
        assert!((sc.initial_mass().unwrap() - 1.0).abs() <= 1e-10, "factor {factor}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v: serde_json::Value =
            serde_json::to_value(baseline_scenario(1, 8)).unwrap();
        v["extra_knob"] = serde_json::json!(3);
        let text = serde_json::to_string(&v).unwrap();
        let err = parse_scenario(&text).unwrap_err();
        assert!(err.to_string().contains("extra_knob"), "{err}");
    }

    #[test]
    fn wrong_schema_version_is_rejected() {
        let mut sc = baseline_scenario(1, 8);
        sc.schema_version = 99;
        let err = parse_scenario(&serde_json::to_string(&sc).unwrap()).unwrap_err();
        assert!(err.to_string().contains("schema_version"), "{err}");
    }

    #[test]
    fn validation_names_the_field() {
        let mut sc = baseline_scenario(2, 8);
        sc.t_final = -1.0;
        let err = parse_scenario(&serde_json::to_string(&sc).unwrap()).unwrap_err();
        assert!(err.to_string().contains("t_final"), "{err}");

        let mut sc = baseline_scenario(2, 8);
        sc.i0 = SpatialFn::GaussianBump { center: vec![0.5], width: 0.1, base: 0.0, peak: 1.0 };
        let err = parse_scenario(&serde_json::to_string(&sc).unwrap()).unwrap_err();
        assert!(err.to_string().contains("i0"), "{err}");

        let mut sc = baseline_scenario(1, 8);
        sc.params.mu_i = -0.5;
        let err = parse_scenario(&serde_json::to_string(&sc).unwrap()).unwrap_err();
        assert!(err.to_string().contains("params"), "{err}");
    }

    #[test]
    fn negative_initial_data_is_rejected() {
        let mut sc = baseline_scenario(1, 8);
        sc.r0 = SpatialFn::Constant { value: -0.1 };
        assert!(parse_scenario(&serde_json::to_string(&sc).unwrap()).is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let sc = baseline_scenario(1, 8);
        assert_eq!(scenario_hash(&sc), scenario_hash(&sc.clone()));
        let mut other = sc.clone();
        other.t_final = 6.0;
        assert_ne!(scenario_hash(&sc), scenario_hash(&other));
    }

    #[test]
    fn manifest_records_replica_seeds() {
        let text = serde_json::to_string(&baseline_scenario(1, 8)).unwrap();
        let loaded = parse_scenario(&text).unwrap();
        let m = RunManifest::new("simulate", &loaded, 42, 3, 2);
        assert_eq!(m.replica_seeds.len(), 3);
        assert_eq!(m.replica_seeds[1], replica_seed(42, 1));
        assert_eq!(m.threads, 2);
    }
}
