//! Declarative scenarios, the slot-level simulation loop, run directories
//! and batch suites.

mod config;
mod output;
mod sim;
mod suite;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{
    CheckBounds, ConfigError, ControllerSpec, PairController, RandomApps, ResolvedScenario, ScenarioConfig,
    TopologySpec,
};
pub use output::{
    write_buffer_trace, write_requests, write_run_dir, CheckOutcome, RunSummary, BUFFER_FILE, CONFIG_FILE,
    REQUESTS_FILE, SUMMARY_FILE,
};
pub use sim::{run, AppSummary, EpisodeSummary, PairSummary, QuiksSummary, RunResult, StableEpisode};
pub use suite::{run_suite, scenario_files, SuiteOptions, SuiteReport, SuiteRow, SUITE_TABLE};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl From<std::io::Error> for ScenarioError {
    fn from(source: std::io::Error) -> Self {
        ScenarioError::Io {
            path: PathBuf::new(),
            source,
        }
    }
}

/// Resolves and runs a config. Relative topology paths are taken from
/// `base_dir`.
pub fn run_config(config: &ScenarioConfig, base_dir: Option<&Path>) -> Result<RunResult, ScenarioError> {
    let scenario = config.resolve(base_dir)?;
    Ok(run(&scenario))
}
