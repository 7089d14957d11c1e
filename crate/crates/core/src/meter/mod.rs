//! Decoder energy and time measurement on top of cumulative energy counters.
//!
//! A measurement subtracts a calibrated idle draw from the counter delta of
//! each run and repeats runs until a Student-t confidence interval on the
//! mean energy is narrow enough.

mod backend;
mod command;
mod lock;
mod measure;
mod stats;

use std::path::PathBuf;

use thiserror::Error;

pub use backend::{
    counter_delta, read_counter, BackendConfig, BackendKind, PowerBackend, RaplSysfs, ReplayTrace, SyntheticSampler,
    Workload, DEFAULT_RAPL_DOMAIN, DEFAULT_VIRTUAL_MAX_COUNTER,
};
pub use command::DecoderInvocation;
pub use lock::{default_lock_path, MeasurementLock, LOCK_ENV};
pub use measure::{
    calibrate_idle, measure_once, measure_until_confident, EnergyMeasurement, IdleBaseline, Sample, SampleOutcome,
};
pub use stats::{confidence_check, student_t_quantile, ConfidenceCheck, StoppingRule};

#[derive(Debug, Error)]
pub enum MeterError {
    #[error("energy backend unavailable at {path}: {reason}")]
    BackendUnavailable { path: PathBuf, reason: String },
    #[error("corrupt counter reading {value} (modulus {max})")]
    CorruptCounter { value: u64, max: u64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("need at least 2 samples for a confidence test, got {got}")]
    InsufficientSamples { got: usize },
    #[error("decoder failed (exit status {status:?}): {output}")]
    DecodeFailed { status: Option<i32>, output: String },
    #[error("{rejected} negative-energy samples rejected ({kept} kept); idle baseline has drifted")]
    TooManyRejected { rejected: usize, kept: usize },
    #[error("measurement lock {path}: {reason}")]
    Lock { path: PathBuf, reason: String },
}
