//! Experiment orchestration: plan the settings matrix, generate captions
//! through a resumable cache, filter rejected samples, score and report.

mod cache;
mod config;
mod execute;
mod plan;
mod report;

use std::path::PathBuf;

pub use cache::{CacheKey, CacheRecord, GenerationCache};
pub use config::{MetricsConfig, RunConfig, ScorerConfig};
pub use execute::{
    build_providers, build_scorer, execute, prepare, CellResult, DatasetCounts, PreparedRun,
    ProviderSnapshot, RejectionSummary, RunManifest, RunResult, RunStamp, ScorerInfo,
    FAILURE_POLICY,
};
pub use plan::{plan, Setting};
pub use report::{format_value, render_report, ReportFormat, METRIC_HEADERS};

use crate::datasets::{DatasetError, SubsetTooLarge};
use crate::providers::ProviderError;
use crate::scoring::ScoreError;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Subset(#[from] SubsetTooLarge),
    #[error("scorer: {0}")]
    Scorer(#[from] ScoreError),
    #[error("scoring failed: {0}")]
    Scoring(String),
    #[error("report rendering failed: {0}")]
    Report(String),
    #[error("manifest has no setting reports")]
    EmptyManifest,
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl From<ProviderError> for RunError {
    fn from(e: ProviderError) -> Self {
        match e {
            ProviderError::ConfigInvalid(m) => RunError::ConfigInvalid(m),
        }
    }
}
