use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = DnkError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DnkError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("loss function is not deterministic: {first} vs {second} at identical parameters")]
    NonDeterministicLoss { first: f64, second: f64 },

    #[error("planner failed: {0}")]
    Planner(String),

    #[error("empty input to {0}")]
    Empty(&'static str),

    #[error("bad magic in {path}: expected {expected:?}")]
    BadMagic { path: PathBuf, expected: &'static str },

    #[error("unsupported format version {found} in {path} (expected {expected})")]
    Version {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("truncated file {path}: {detail}")]
    Truncated { path: PathBuf, detail: String },

    #[error("malformed header in {path}: {detail}")]
    Header { path: PathBuf, detail: String },

    #[error("record generation failed after {attempts} attempts (record {record}, seed {seed})")]
    RetriesExhausted {
        record: usize,
        seed: u64,
        attempts: usize,
    },

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl DnkError {
    pub fn dim(context: &'static str, expected: usize, actual: usize) -> Self {
        DnkError::Dimension {
            context,
            expected,
            actual,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DnkError::Io {
            path: path.into(),
            source,
        }
    }
}
