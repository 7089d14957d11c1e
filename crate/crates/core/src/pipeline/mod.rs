//! Experiment orchestration: plan files, encode jobs, measured decodes and
//! the result store.

mod exec;
mod jobs;
mod plan;
pub(crate) mod record;
mod store;
mod template;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use exec::{
    bitrate_kbps, cache_marker, encode_all, measure_all, run_decode_measured, run_encode, MeasureContext,
    MeasureSummary,
};
pub use jobs::{decoded_path, decoder_argv, encoder_argv, plan_jobs, JobPlan, JobRecord};
pub use plan::{
    CodecVariant, IdleSource, MeasurementSettings, Plan, PlanOptions, SequenceEntry, VariantRole,
    DEFAULT_IDLE_CALIBRATION_S,
};
pub use record::{
    build_curves, latest_records, CodingConfig, CostField, CurveKey, CurveSet, JobStatus, ResultRecord, SequenceClass,
    DEFAULT_QPS, FLAG_NOT_CONVERGED,
};
pub use store::{write_csv, ResultStore, CSV_COLUMNS};
pub use template::CommandTemplate;

use crate::meter::MeterError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid plan {}:\n  - {}", path.display(), problems.join("\n  - "))]
    InvalidPlan { path: PathBuf, problems: Vec<String> },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {reason}", path.display())]
    Store { path: PathBuf, line: usize, reason: String },
    #[error(transparent)]
    Meter(#[from] MeterError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl PipelineError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
