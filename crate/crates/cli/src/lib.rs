//! Data ingestion, experiment configuration and report emission for the
//! `dpfair` command-line tool.

pub mod config;
pub mod error;
pub mod ingest;
pub mod runner;
pub mod synth;

pub use config::ExperimentConfig;
pub use error::CliError;
pub use runner::{run_experiment, Overrides, RunOutput, StrategyResult};
