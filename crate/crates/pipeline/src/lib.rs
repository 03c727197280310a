//! Batch runs over datasets, rejection sampling and training-data export.

pub mod bench;
pub mod config;
pub mod export;
pub mod sampling;

use std::io::Write;
use std::path::{Path, PathBuf};

use dcn_core::projection::Trajectory;
use thiserror::Error;

pub use bench::{load_records, read_transcripts, run_benchmark, write_metrics_csv, FailureInfo, RunHooks, RunOutput, SessionRunner};
pub use config::{template_store, LlmSettings, Provider, RunSpec};
pub use export::{creditor_prompts, export_pairs, run_export, write_pairs, ExportMode, ExportSpec, ExportStats, TrainingPair};
pub use sampling::{filter1, filter2, keep_count, run_sampling, select_best_per_record, Candidate, Filter1, SampleSpec};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Domain(#[from] dcn_core::DomainError),
    #[error(transparent)]
    Metrics(#[from] dcn_core::metrics::MetricsError),
    #[error(transparent)]
    Template(#[from] dcn_agents::TemplateError),
    #[error(transparent)]
    Cassette(#[from] dcn_llm::CassetteError),
    #[error("agent: {0}")]
    Agent(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl PipelineError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        PipelineError::Io { path: path.to_path_buf(), message: e.to_string() }
    }
}

/// Day-by-day trajectory as CSV: `day,assets,debt_remaining,cumulative_paid,tier`.
pub fn write_trajectory_csv<W: Write>(writer: W, traj: &Trajectory) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["day", "assets", "debt_remaining", "cumulative_paid", "tier"])?;
    for day in 0..traj.assets.len() {
        w.write_record([
            day.to_string(),
            traj.assets[day].to_string(),
            traj.debt_remaining[day].to_string(),
            traj.cumulative_paid[day].to_string(),
            traj.tier[day].to_string(),
        ])?;
    }
    w.flush().map_err(|e| PipelineError::io(Path::new("trajectory.csv"), e))
}
