//! One error type for the whole pipeline.

use std::path::PathBuf;

use thiserror::Error;

use crate::mask_oracle::OracleError;

#[derive(Debug, Error)]
pub enum Error {
    /// Rejected configuration values (zero counts, negative scales, ...).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Structurally valid input that violates a data contract.
    #[error("invalid data: {0}")]
    Data(String),

    /// Malformed on-disk container. `offset` is the byte where parsing failed.
    #[error("{path}: malformed at byte {offset}: {message}")]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    /// Container version this build does not understand.
    #[error("{path}: unsupported container version {found} (expected {expected})")]
    UnsupportedVersion {
        path: PathBuf,
        found: u8,
        expected: u8,
    },

    /// Projection of a point with non-positive camera-space depth.
    #[error("point behind camera (depth {depth})")]
    BehindCamera { depth: f64 },

    /// Pixel coordinate outside a view of the stated size.
    #[error("pixel ({row}, {col}) out of bounds for {height}x{width} view")]
    PixelOutOfBounds {
        row: i64,
        col: i64,
        height: usize,
        width: usize,
    },

    /// Point index outside the cloud it refers to.
    #[error("point index {index} out of range for {len} points")]
    IndexOutOfRange { index: usize, len: usize },

    /// Non-finite values where finite arithmetic is required.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Supervision that cannot drive a loss (for example no labeled points).
    #[error("unusable supervision: {0}")]
    Supervision(String),

    #[error(transparent)]
    Oracle(#[from] OracleError),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    /// Command-line misuse detected past argument parsing.
    #[error("{0}")]
    Usage(String),
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
