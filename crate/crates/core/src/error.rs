//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument or configuration violates a precondition.
    #[error("{0}")]
    Validation(String),

    #[error("non-finite coordinate at point {index}")]
    NonFiniteCoordinate { index: usize },

    #[error("missing property: {name}")]
    MissingProperty { name: String },

    #[error("malformed header at line {line}: {reason}")]
    MalformedHeader { line: usize, reason: String },

    #[error("malformed vertex record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },

    #[error("tensor {name}: expected shape {expected_rows}x{expected_cols}, found {found_rows}x{found_cols}")]
    TensorShape {
        name: String,
        expected_rows: usize,
        expected_cols: usize,
        found_rows: usize,
        found_cols: usize,
    },

    #[error("non-finite gradient in tensor {tensor}")]
    NanGradient { tensor: String },

    /// The forward cache was produced by a different parameter version.
    #[error("stale forward cache: parameters changed since the forward pass")]
    StaleCache,

    #[error("dense reference refused: n = {n} exceeds the {max} point cap")]
    DenseSizeLimit { n: usize, max: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
