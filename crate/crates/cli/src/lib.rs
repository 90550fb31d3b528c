//! Experiment harness behind the `garchmix` binary: configuration files,
//! command dispatch and CSV/JSON output.

pub mod config;
pub mod format;
pub mod run;

pub use config::{Command, ConfigError, ExperimentConfig, ModelConfig, RunConfig};
pub use run::{run, RunError, RunOutput};

/// Environment variable that overrides the configured worker count.
pub const WORKERS_ENV: &str = "GARCHMIX_WORKERS";
