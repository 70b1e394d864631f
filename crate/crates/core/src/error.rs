//! Error type shared across the toolkit.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        context: String,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("empty attention support")]
    EmptyAttentionSupport,

    /// NaN or Inf observed where a finite value is required.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("state error: {0}")]
    State(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed or corrupted file content (bad magic, checksum, truncation).
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("data error: {0}")]
    Data(String),

    /// Experimental-protocol violation, e.g. speaker leakage across a split.
    #[error("protocol violation: {0}")]
    Protocol(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub fn shape(context: impl Into<String>, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
