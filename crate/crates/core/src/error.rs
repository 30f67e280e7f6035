use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid signal: {0}")]
    InvalidSignal(String),

    #[error("non-monotone timestamps at row {row}")]
    NonMonotoneTimestamps { row: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("signal too short: {duration_s:.3} s available, {required_s} s required")]
    SignalTooShort { duration_s: f64, required_s: u32 },

    #[error("session too short to augment: {cols} columns, need at least {m}")]
    SessionTooShort { cols: usize, m: usize },

    #[error("degenerate session: spectrogram has no positive entry")]
    DegenerateSession,

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("labeling: {0}")]
    Labeling(String),

    #[error("evaluation: {0}")]
    Eval(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
