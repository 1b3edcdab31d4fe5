use thiserror::Error;

/// Broad error class, used by the CLI to choose an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("kernel evaluation failed at lag {lag}: value {value}")]
    KernelEvaluation { lag: f64, value: f64 },

    #[error("invalid configuration `{key}`: {message}")]
    InvalidConfig { key: String, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("index {index} out of range 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("surface rejected: {0}")]
    InvalidSurface(String),

    #[error("non-finite forward variance at step {step}, mesh point u={u}")]
    NonFiniteVariance { step: usize, u: f64 },

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("matrix B is numerically singular (condition number {condition:e})")]
    SingularMatrix {
        condition: f64,
        matrix: Vec<Vec<f64>>,
    },

    #[error("covariance is not invertible: {0}")]
    NotInvertible(String),

    #[error("interpolation: {0}")]
    Interpolation(String),

    #[error("ingest: {0}")]
    Ingest(String),

    #[error("monte carlo study has no successful replications ({failures} failures)")]
    NoSuccesses { failures: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidConfig { .. } | Error::DimensionMismatch { .. } => ErrorClass::Config,
            Error::InvalidInput(_)
            | Error::IndexOutOfRange { .. }
            | Error::Parse { .. }
            | Error::InvalidSurface(_)
            | Error::Interpolation(_)
            | Error::Ingest(_)
            | Error::Io(_)
            | Error::Csv(_) => ErrorClass::Data,
            Error::KernelEvaluation { .. }
            | Error::NonFiniteVariance { .. }
            | Error::Estimation(_)
            | Error::SingularMatrix { .. }
            | Error::NotInvertible(_)
            | Error::NoSuccesses { .. } => ErrorClass::Numerical,
        }
    }

    pub(crate) fn config(key: &str, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            key: key.to_string(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
