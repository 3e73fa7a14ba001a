//! Command-line driver: configuration, CSV data, checkpoints, metrics and
//! the `train`, `eval`, `diagnose-plateau`, `encode` and `make-toy` commands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod metrics;
pub mod toy;

pub use error::CliError;
