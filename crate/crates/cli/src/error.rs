use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] lti_twin::Error),

    #[error("CSV error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{0}")]
    Usage(String),

    #[error("{0} oracle checks failed")]
    OracleFailed(usize),
}

/// Process exit status for each failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Config = 2,
    Io = 3,
    Numerical = 4,
    Artifact = 5,
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        use lti_twin::Error as E;
        match self {
            CliError::Core(e) if e.is_numerical() => ExitCode::Numerical,
            CliError::Core(E::Io { .. }) | CliError::Csv { .. } => ExitCode::Io,
            CliError::Core(
                E::MissingArtifact { .. } | E::HashMismatch { .. } | E::Format { .. },
            ) => ExitCode::Artifact,
            CliError::OracleFailed(_) => ExitCode::Numerical,
            CliError::Core(_) | CliError::Usage(_) => ExitCode::Config,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
