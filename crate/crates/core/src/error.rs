use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("timestamp misalignment: {0}")]
    TimestampMisalignment(String),

    #[error("timestamps not increasing: {0}")]
    TimestampsNotIncreasing(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("sequence too short: need at least {required} steps, got {actual}")]
    TooShort { required: usize, actual: usize },

    #[error("zero variance: {0}")]
    ZeroVariance(String),

    #[error("empty split: {0}")]
    EmptySplit(String),

    #[error("parameter count mismatch for {kind}: expected {expected}, got {actual}")]
    ParameterCount {
        kind: String,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("ensemble member with seed {seed} failed: {source}")]
    Member {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
