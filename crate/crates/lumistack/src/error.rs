//! Error type shared across the crate.

use std::path::PathBuf;

/// Errors reported by library operations.
///
/// Variants that originate from a specific input frame carry its id so a
/// batch caller can name the offending record.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain mismatch: expected {expected}, got {actual}")]
    DomainMismatch { expected: String, actual: String },

    #[error("frame {frame_id}: {message}")]
    Frame { frame_id: String, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("json error on {path}: {message}")]
    Json { path: PathBuf, message: String },

    #[error("solver did not converge: {0}")]
    NoConvergence(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn frame(id: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Frame {
            frame_id: id.into(),
            message: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
