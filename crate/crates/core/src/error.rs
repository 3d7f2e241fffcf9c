use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("unsupported model format version {found} (expected {expected})")]
    Version { found: u64, expected: u64 },

    #[error("corrupt model file: {0}")]
    Corrupt(String),

    #[error("shape mismatch: expected {expected} columns, got {found}")]
    Shape { expected: usize, found: usize },

    #[error("block alignment error: {0}")]
    Alignment(String),

    #[error("weather join failed, missing hours: {}", .0.join(", "))]
    MissingWeather(Vec<String>),

    #[error("reports without any usable modality: {}", .0.join(", "))]
    IsolatedReports(Vec<String>),

    #[error("node {0} has no neighbors")]
    DeadEnd(String),

    #[error("no embedding for reports: {}", .0.join(", "))]
    MissingEmbedding(Vec<String>),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing artifact {path}: run `{stage}` first")]
    MissingStage { stage: &'static str, path: PathBuf },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
