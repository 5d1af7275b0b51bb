use std::path::PathBuf;

use crate::movement::Movement;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("stream format: {0}")]
    StreamFormat(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid calibration set: {0}")]
    InvalidCalibration(String),

    #[error("within-class scatter is singular; a positive regularization is required")]
    RegularizationRequired,

    #[error("degenerate axis for {0}: class centroid coincides with rest")]
    DegenerateAxis(Movement),

    #[error("axis set is empty")]
    EmptyAxisSet,

    #[error("model has no {0} centroid")]
    MissingClass(Movement),

    #[error("session index {0} out of range 1..=11")]
    SessionIndex(u32),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("{movement} is not part of the current stage")]
    UnknownMovement { movement: Movement },

    #[error("exploration budget exhausted ({elapsed_ms} ms of {max_ms} ms)")]
    BudgetExhausted { elapsed_ms: u64, max_ms: u64 },

    #[error("feature source produced no samples for {0}")]
    EmptyStream(Movement),

    #[error("trial already adjudicated")]
    TrialFinished,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
