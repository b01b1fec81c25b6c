use std::path::PathBuf;

/// Failure of a subcommand, carrying the process exit code it maps to.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Unreadable or malformed input data (exit 2).
    #[error("malformed input {path}: {reason}")]
    Input { path: PathBuf, reason: String },

    /// Invalid parameters or configuration (exit 3).
    #[error("invalid parameter: {0}")]
    Params(String),

    /// A verification or training run failed (exit 1).
    #[error("{0}")]
    Failed(String),

    /// Writing results failed (exit 1).
    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Failed(_) | CliError::Output { .. } => 1,
            CliError::Input { .. } => 2,
            CliError::Params(_) => 3,
        }
    }

    pub(crate) fn input(path: impl Into<PathBuf>, reason: impl std::fmt::Display) -> Self {
        CliError::Input {
            path: path.into(),
            reason: reason.to_string(),
        }
    }

    pub(crate) fn params(reason: impl std::fmt::Display) -> Self {
        CliError::Params(reason.to_string())
    }

    pub(crate) fn output(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Output {
            path: path.into(),
            source,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
