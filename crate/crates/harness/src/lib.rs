//! Experiment harness for the synstop simulator: configuration files,
//! seeded single runs, grid sweeps, and post-hoc report verification.

pub mod config;
pub mod error;
pub mod experiment;
pub mod report;
pub mod summary;
pub mod sweep;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
pub use experiment::{run_experiment, RunResult};
