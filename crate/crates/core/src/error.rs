use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid kernel parameters: {0}")]
    KernelValidity(String),

    #[error("matrix is not positive definite (jitter up to {max_jitter:e} failed)")]
    NotPositiveDefinite { max_jitter: f64 },

    #[error("internal consistency error: {0}")]
    Consistency(String),

    #[error("log density evaluation failed: {0}")]
    Evaluation(String),

    #[error("sampler initialization failed: {0}")]
    Initialization(String),

    #[error("diagnostic unavailable: {0}")]
    DiagnosticUnavailable(String),

    #[error("simulation failed: {0}")]
    Simulation(String),

    #[error("test undefined: {0}")]
    TestUndefined(String),

    #[error("{path}:{line}: {message}")]
    Validation {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid prior specification: {0}")]
    Prior(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used by the command-line driver to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Input,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::NotPositiveDefinite { .. }
            | Error::Evaluation(_)
            | Error::Initialization(_)
            | Error::Consistency(_)
            | Error::Simulation(_)
            | Error::TestUndefined(_)
            | Error::DiagnosticUnavailable(_) => ErrorClass::Numerical,
            _ => ErrorClass::Input,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidGrid(_) => "invalid_grid",
            Error::Domain(_) => "domain",
            Error::KernelValidity(_) => "kernel_validity",
            Error::NotPositiveDefinite { .. } => "not_positive_definite",
            Error::Consistency(_) => "consistency",
            Error::Evaluation(_) => "evaluation",
            Error::Initialization(_) => "initialization",
            Error::DiagnosticUnavailable(_) => "diagnostic_unavailable",
            Error::Simulation(_) => "simulation",
            Error::TestUndefined(_) => "test_undefined",
            Error::Validation { .. } => "validation",
            Error::Prior(_) => "prior",
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
