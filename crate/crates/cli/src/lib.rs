//! Experiment runner: dataset synthesis, multi-dataset training,
//! evaluation, gradient checks and metrics export, all driven by one JSON
//! [`config::RunConfig`].

pub mod commands;
pub mod config;
pub mod error;
pub mod export;
pub mod train;

pub use error::{CliError, CliResult};
