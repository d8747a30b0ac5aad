//! Command-line driver: experiment configuration, the train/evaluate
//! pipeline, and the `wavebank` subcommands.

pub mod commands;
pub mod config;
pub mod run;

pub use commands::run_command;
pub use config::{load_config, ExperimentConfig};
