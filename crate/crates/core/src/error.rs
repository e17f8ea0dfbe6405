//! Error type shared by every module in the crate.

use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
///
/// Variants are grouped by how a front end should report them: usage
/// problems (bad flag values, ill-typed model specs), data problems
/// (unreadable or malformed files), and internal invariant violations
/// that indicate a bug in the pipeline itself.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("corrupt record {index} in {path}: {reason}")]
    CorruptRecord {
        path: PathBuf,
        index: usize,
        reason: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid model spec: {0}")]
    ModelSpec(String),

    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
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
}

pub type Result<T> = std::result::Result<T, Error>;
