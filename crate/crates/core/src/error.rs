use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the core library can report.
///
/// Variants are grouped by the stage that raises them so that front ends can
/// map them onto coarse exit categories with [`Error::category`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("edf: {reason} (byte offset {offset})")]
    EdfFormat { offset: u64, reason: String },

    #[error("edf: channel {index} not found ({available} signals in file)")]
    ChannelNotFound { index: usize, available: usize },

    #[error("edf: truncated data record {record} at byte offset {offset}")]
    TruncatedRecord { record: usize, offset: u64 },

    #[error("annotations line {line}: {reason}")]
    Annotation { line: usize, reason: String },

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("invalid synthetic plan: {0}")]
    InvalidPlan(String),

    #[error("ambiguous ground truth: {0}")]
    AmbiguousLabels(String),

    #[error("event outside record span: {0}")]
    EventOutOfSpan(String),

    #[error("record of {duration_s} s is shorter than the {span_s} s window span")]
    RecordTooShort { duration_s: usize, span_s: usize },

    #[error("cannot keep {requested} Normal windows, only {available} available")]
    NotEnoughNormals { requested: usize, available: usize },

    #[error("split: {0}")]
    Split(String),

    #[error("window container: {0}")]
    Container(String),

    #[error("signal too short: {0}")]
    SignalTooShort(String),

    #[error("zero-variance signal")]
    ZeroVariance,

    #[error("invalid sample rate {0} Hz")]
    InvalidSampleRate(f64),

    #[error("too few intervals: need {needed}, got {got}")]
    TooFewIntervals { needed: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("label index {0} outside the class enum")]
    InvalidLabel(u8),

    #[error("inconsistent network topology: {0}")]
    Topology(String),

    #[error("non-finite activation at layer {layer}")]
    NonFiniteActivation { layer: usize },

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error("quantization: {0}")]
    Quantization(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("cost table: {0}")]
    CostTable(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Coarse classification used by command-line front ends for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::InvalidArgument(_)
            | Error::InvalidPlan(_)
            | Error::Topology(_)
            | Error::CostTable(_) => ErrorCategory::Config,
            Error::NonFiniteActivation { .. }
            | Error::Diverged { .. }
            | Error::ZeroVariance
            | Error::Quantization(_) => ErrorCategory::Numeric,
            _ => ErrorCategory::Data,
        }
    }
}
