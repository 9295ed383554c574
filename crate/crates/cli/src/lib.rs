//! Experiment harness for the hybrid optimizer: config files, single runs,
//! sweeps over the budget ratio, rate ratio and ZO-loss weight, and the
//! verification suites.

pub mod app;
pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod output;
pub mod sweep;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
pub use experiment::{build_workload, run, RunOutcome, Workload};
pub use sweep::{run_many, run_sweep, Axis, SweepResult};
