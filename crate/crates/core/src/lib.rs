//! Online sketched Newton-Raphson.
//!
//! Tracks zeros of time-varying vector fields `F_t : Rⁿ → Rᵐ` (or minima of
//! time-varying objectives through `F = ∇g`) with one randomly sketched
//! Newton-Raphson step per round, optionally under linear equality
//! constraints with a moving right-hand side.

pub mod affine;
pub mod algorithms;
mod clock;
pub mod error;
pub mod matpower;
pub mod metrics;
pub mod problems;
pub mod rng;
pub mod sketch;

pub use affine::AffineConstraintSet;
pub use algorithms::{osnr_ec_run, osnr_run, ogd_run, resolve_onm, Algorithm, RunConfig, TrajectoryRecord};
pub use error::{Error, Result};
pub use matpower::{load_case, parse_case, CaseError, PowerCase};
pub use problems::{EqualityConstrained, OnlineObjective, OnlineVectorField};
pub use sketch::{sample_sketch, snr_step, SketchSelector, SketchSize, StepKernel, StepOptions};

/// Crate version, echoed into experiment manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
