//! Experiment runner: configuration, checkpoint files, orchestration and
//! CSV/JSON output for the modeconn laboratory.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod output;
pub mod run;

pub use config::{parse_config, parse_str, ExperimentConfig};
pub use error::CliError;
