//! Experiment orchestration for outage-aware greedy allocation: dataset
//! generation, training, parameter sweeps and self-verification.

pub mod commands;
pub mod config;
pub mod error;
pub mod verify;

pub use error::{CliError, CliResult};
