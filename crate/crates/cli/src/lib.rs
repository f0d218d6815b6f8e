//! Experiment driver: config, cached pipeline stages, sweeps and output
//! files for the `nsann` binary.

pub mod commands;
pub mod config;
pub mod output;
pub mod pipeline;
pub mod sweeps;

pub use commands::{execute, resolve_config, Command};
pub use config::ExperimentConfig;
pub use pipeline::Pipeline;
