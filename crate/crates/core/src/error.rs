use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the inference stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dense expansion needs {entries} entries, above the cap of {cap}")]
    DenseCapExceeded { entries: u128, cap: u128 },

    #[error("circulant embedding length {len} is shorter than the required {min}")]
    EmbeddingTooShort { len: usize, min: usize },

    #[error("time integration produced a non-finite value at solver step {step}")]
    Integration { step: u64 },

    #[error("matrix is not positive definite ({context})")]
    NotPositiveDefinite { context: &'static str },

    #[error(
        "{context} is not symmetric: relative asymmetry {asymmetry:.3e} exceeds {tolerance:.1e}"
    )]
    Asymmetry {
        context: &'static str,
        asymmetry: f64,
        tolerance: f64,
    },

    #[error("{context} is not positive semidefinite: min eigenvalue {min_eig:.3e}")]
    NotSemidefinite { context: &'static str, min_eig: f64 },

    #[error("{context} has negative variance {value:.3e} at index {index}")]
    NegativeVariance {
        context: &'static str,
        index: usize,
        value: f64,
    },

    #[error("zero-norm reference in {0}")]
    ZeroNorm(&'static str),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {kind} data: {detail}")]
    Format { kind: &'static str, detail: String },

    #[error(
        "artifact {path} was built for config hash {found}, current config hashes to {expected}"
    )]
    HashMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("missing {phase} artifacts in {dir}: run `{command}` first")]
    MissingArtifact {
        phase: &'static str,
        command: &'static str,
        dir: PathBuf,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dims(
        context: &'static str,
        expected: impl std::fmt::Display,
        actual: impl std::fmt::Display,
    ) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerical algebra rather than of inputs or IO.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Integration { .. }
                | Error::NotPositiveDefinite { .. }
                | Error::Asymmetry { .. }
                | Error::NotSemidefinite { .. }
                | Error::NegativeVariance { .. }
        )
    }
}
