//! Crate-wide error type.
//!
//! Shape and dimension mismatches between tensors are programming errors and
//! panic via `assert!` at the op boundary; everything that can go wrong due to
//! external input (files, configs, numerics at runtime) is reported as an
//! [`Error`].

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed file contents. `offset` is the byte position at which the
    /// problem was detected, where that is meaningful.
    #[error("format error in {path} at byte {offset}: {msg}")]
    Format {
        path: PathBuf,
        offset: usize,
        msg: String,
    },

    /// Semantically invalid input: bad config values, inconsistent scene
    /// directories, checkpoint/model mismatches, and similar.
    #[error("invalid input: {0}")]
    Validation(String),

    /// Numerical failure at runtime: non-finite loss, NaN gradients, a failed
    /// gradient check.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, offset: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            offset,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
