//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Signal length does not satisfy a structural requirement.
    #[error("invalid length {len}: {reason}")]
    InvalidLength { len: usize, reason: String },

    /// Two signals that must share a length do not.
    #[error("length mismatch: {left} vs {right} ({context})")]
    LengthMismatch {
        left: usize,
        right: usize,
        context: String,
    },

    /// A configuration or parameter value is out of its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A non-finite value was produced or encountered.
    #[error("non-finite value at index {index} in {stage}")]
    NonFinite { index: usize, stage: String },

    /// The optimizer could not make progress and had to abort.
    #[error("solver abort: {0}")]
    SolverAbort(String),

    /// A file could not be parsed in the requested format.
    #[error("parse error in {path} line {line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
