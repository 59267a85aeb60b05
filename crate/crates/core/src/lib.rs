//! Spatial SIR epidemics on the unit box: an exact event-driven stochastic
//! lattice model, its deterministic patch-ODE limit and the reaction-diffusion
//! PDE limit, together with the convergence experiments linking the three.
//!
//! Module map:
//! - [`grid`]: lattice geometry, step-function fields, discrete operators, norms
//! - [`spectral`]: cosine eigenbasis of the Neumann Laplacian and heat semigroups
//! - [`patch`]: the deterministic patch model and its two time integrators
//! - [`reference`]: PDE reference solutions (fine mesh + spectral Picard) and
//!   the mesh-refinement study
//! - [`ssa`]: the exact Gillespie engine for the spatial jump process
//! - [`experiments`]: the convergence studies as reproducible experiments
//! - [`scenario`]: scenario files, validation and normalization
//! - [`report`]: CSV/JSON/SVG output

pub mod error;
pub mod experiments;
pub mod grid;
pub mod patch;
pub mod reference;
pub mod report;
pub mod rng;
pub mod scenario;
pub mod spectral;
pub mod ssa;

pub use error::{Error, Result};
