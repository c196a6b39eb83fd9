use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] dnk_core::DnkError),

    #[error("unknown config key `{0}`")]
    UnknownKey(String),

    #[error("config key `{key}`: {detail}")]
    BadValue { key: String, detail: String },

    #[error("{path}:{line}: {detail}")]
    Syntax { path: PathBuf, line: usize, detail: String },

    #[error("missing {artifact} ({path}); run `dnk {producer}` first")]
    MissingArtifact {
        artifact: &'static str,
        path: PathBuf,
        producer: &'static str,
    },

    #[error("{path} was produced under config {found}, current config is {expected}")]
    ConfigMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("bad magic in {path}: expected {expected:?}")]
    BadMagic { path: PathBuf, expected: &'static str },

    #[error("malformed model file {path}: {detail}")]
    Model { path: PathBuf, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("selftest failed: {0}")]
    Selftest(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        CliError::Csv { path: path.into(), source }
    }
}
