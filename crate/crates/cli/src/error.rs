use std::path::PathBuf;

use thiserror::Error;

/// Failure classes of a CLI run, each with its own exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{path}: {message}")]
    Parse { path: String, message: String },

    #[error("invalid [{section}] settings: {source}")]
    Validation {
        section: &'static str,
        #[source]
        source: comag::Error,
    },

    #[error("{0}")]
    Runtime(#[from] comag::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Parse { .. } => 3,
            CliError::Validation { .. } => 4,
            CliError::Runtime(_) | CliError::Io { .. } => 5,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}
