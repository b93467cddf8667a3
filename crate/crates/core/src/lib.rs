//! Small-noise reflected forward–backward systems: forward SDE, obstacle
//! PDE, reflected BSDE by regression Monte Carlo, Freidlin–Wentzell rates
//! and a harness comparing predicted and simulated rare-event decay.

pub mod config;
pub mod error;
pub mod forward;
pub mod harness;
pub mod model;
pub mod pde;
pub mod rate;
pub mod rbsde;
pub mod stats;

pub use error::{Error, Result};
pub use model::{
    Coefficient, CoefficientRegistry, Family, ProblemSpec, ProblemSpecBuilder, Role, ScalarPath, SpacePath,
    TimeGrid,
};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
