//! Seeded experiment harness for online sketched Newton-Raphson: runs many
//! seeds of an experiment, writes per-run and aggregated CSV files plus a
//! JSON manifest, and turns a bundle into long-format plot data.

pub mod config;
pub mod error;
pub mod plot;
pub mod probe;
pub mod runner;

pub use config::{ConfigPatch, Experiment, ExperimentConfig, Variant};
pub use error::{BenchError, Result};
pub use plot::{emit_plotdata, Quantity};
pub use runner::{execute_all, run_experiment, BundleReport, Manifest, RunResult};
