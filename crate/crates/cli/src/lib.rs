//! Library side of the `lowrank-online` command-line tool.

pub mod commands;
pub mod config;
pub mod error;

pub use config::{load, resolve, ExperimentConfig, Kind};
pub use error::{CliError, Result};
