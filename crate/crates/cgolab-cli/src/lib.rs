//! Experiment runner for `cgolab`: config parsing, potential recipes, command
//! dispatch with CSV/JSON outputs, and the acceptance suite.

pub mod acceptance;
pub mod commands;
pub mod config;
pub mod recipe;
pub mod report;

pub use commands::{run, CliError};
pub use config::{parse_config, ExperimentConfig};
