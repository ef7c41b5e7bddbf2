//! Batch scenario runner for the DICE optimal-control toolkit.

pub mod config;
pub mod output;
pub mod run;

pub use config::{parse_config, parse_entries, ConfigError, Entry, Mode, Origin, ScenarioConfig, SearchTarget};
pub use output::{write_outputs, OutputError};
pub use run::{run_scenario, RunError, RunOutput, RunStatus};
