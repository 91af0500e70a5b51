//! Experiment harness: scene generation, federated training, round ablations
//! and model rendering behind one command-line tool.

pub mod cli;
pub mod commands;
pub mod config;
pub mod report;

pub use cli::{error_line, run, Cli};
pub use config::{ConfigError, ExperimentConfig};
