// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A model parameter or input value is outside its domain.
    #[error("parameter out of domain: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    /// Engine, detector, or generator configuration rejected at construction.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Input data cannot support the requested computation (e.g. zero variance).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Observation time indices must advance by exactly one per step.
    #[error("time index {got} does not follow {previous}")]
    TimeOrder { previous: i64, got: i64 },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("predictor fit failed: {0}")]
    Fit(String),

    #[error("no external prediction for t={0}")]
    MissingPrediction(i64),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: u64, message: impl Into<String>) -> Self {
        Self::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
