//! Error type shared across the harness.

use thiserror::Error;

/// All failure modes surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A row in an input file could not be decoded.
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// Input decoded but violates the data model (missing frames, bad
    /// quaternions, empty intersections, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Invalid configuration value or unknown option label.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller violated an operation contract (mismatched lengths,
    /// non-consecutive anchors, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Numerical breakdown, e.g. a covariance losing positive-definiteness.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit code for this error class: 2 input, 3 contract, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } | Error::Data(_) | Error::Config(_) | Error::Io { .. } => 2,
            Error::Contract(_) => 3,
            Error::Numerical(_) => 4,
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
