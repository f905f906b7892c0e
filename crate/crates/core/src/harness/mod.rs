//! Command-line harness: configuration, run artifacts, sweeps and reports.

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{cmd_report, cmd_run, cmd_sweep, execute_report, execute_run, execute_sweep, SweepOptions};
pub use config::{parse_and_validate, ExperimentConfig, Policy};
