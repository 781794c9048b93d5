//! Experiment runner: caching, timing, bounded-parallel execution over
//! (corpus x stage x ablation), and report emission.

pub mod cache;
pub mod clock;
pub mod experiment;
pub mod report;

pub use cache::{cached_call, CacheStats, CachedBackend};
pub use clock::{measure_elapsed, Clock, FixedClock, MonotonicClock};
pub use experiment::{run_experiment, standard_ablations, ExperimentOutcome, LabeledTrace};
pub use report::{emit_report, load_rows, render_csv, render_markdown, ReportFormat, BASELINE_MODEL};

use crate::backend::BackendError;
use crate::datasets::DatasetError;
use crate::judge::JudgeError;
use crate::metrics::MetricsError;
use crate::pipeline::PipelineError;
use crate::sabotage::SabotageError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("cannot render a report from zero rows")]
    EmptyRows,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Sabotage(#[from] SabotageError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}
