use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: schema mismatch: {detail}")]
    Schema { path: PathBuf, detail: String },

    #[error("{path}: row {row}: {detail}")]
    MalformedRow {
        path: PathBuf,
        row: usize,
        detail: String,
    },

    #[error("empty dataset")]
    EmptyDataset,

    /// A record violates a dataset invariant; `row` is zero-based.
    #[error("record {row}: {detail}")]
    InvalidRecord { row: usize, detail: String },

    #[error("column `{0}` is constant and cannot be scaled")]
    ConstantColumn(String),

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("current {current} A outside [{min}, {max}] A")]
    CurrentOutOfRange { current: f64, min: f64, max: f64 },

    #[error("non-finite simulation state at step {step}")]
    NonFiniteState { step: usize },

    #[error("duplicate run_id {0}")]
    DuplicateRun(u32),

    #[error("indexing kept no samples (threshold {threshold} mm, max |delta| {max_abs_delta} mm)")]
    EmptyIndexing { threshold: f64, max_abs_delta: f64 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),

    #[error("{path}: invalid config: {source}")]
    Config {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("configuration `{name}` failed: {source}")]
    Configuration {
        name: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 3,
            Error::Config { .. } | Error::InvalidParameter(_) => 4,
            Error::Schema { .. }
            | Error::MalformedRow { .. }
            | Error::EmptyDataset
            | Error::InvalidRecord { .. }
            | Error::Json { .. }
            | Error::InvalidModel(_) => 5,
            Error::Configuration { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}
