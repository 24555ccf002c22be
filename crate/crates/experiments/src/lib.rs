//! Config-driven experiments over the `flowlab` core.
//!
//! A run takes an [`ExperimentConfig`], executes its scenario for every
//! seed, and writes a [`Report`] plus metric and trajectory CSVs. All
//! randomness is derived from the config's seeds, so a config fully
//! determines the output files.

pub mod config;
pub mod report;
pub mod scenarios;

use std::path::{Path, PathBuf};

pub use config::{ConfigError, ExperimentConfig, Scenario};
pub use report::{Outcome, Report};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("{0}")]
    Config(#[from] ConfigError),

    #[error("{module}::{operation} failed: {source}")]
    Runtime {
        module: &'static str,
        operation: &'static str,
        #[source]
        source: flowlab::Error,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ExperimentError {
    pub fn runtime(module: &'static str, operation: &'static str, source: flowlab::Error) -> Self {
        Self::Runtime {
            module,
            operation,
            source,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Runs the scenario without touching the filesystem (scene files aside).
pub fn execute(config: &ExperimentConfig) -> Result<Outcome, ExperimentError> {
    config.validate()?;
    match config.scenario {
        Scenario::ErrorReduction => scenarios::error_reduction::run(config),
        Scenario::Stability => scenarios::stability::run(config),
        Scenario::Wasserstein => scenarios::wasserstein::run(config),
        Scenario::Ambiguous => scenarios::ambiguous::run(config),
        Scenario::Visibility => scenarios::visibility::run(config),
        Scenario::Ablation => scenarios::ablation::run(config),
    }
}

/// Runs the scenario and writes `report.json`, `metrics.csv` and
/// `trajectories/*.csv` under `config.output`.
pub fn run(config: &ExperimentConfig) -> Result<Report, ExperimentError> {
    let outcome = execute(config)?;
    let mut report = Report::new(config, &outcome);
    report::write_outputs(&config.output, &mut report, &outcome)?;
    Ok(report)
}
