use std::path::Path;

/// Errors surfaced by the command-line tool.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: String, reason: String },
    #[error(transparent)]
    Numerical(#[from] spdnorm::Error),
    /// A check ran to completion but did not meet its threshold.
    #[error("{0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn format(path: &Path, reason: impl Into<String>) -> Self {
        CliError::Format {
            path: path.display().to_string(),
            reason: reason.into(),
        }
    }

    /// 1 for usage and input problems, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Io { .. } | CliError::Format { .. } => 1,
            CliError::Numerical(spdnorm::Error::Config(_)) => 1,
            CliError::Numerical(_) | CliError::CheckFailed(_) => 2,
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io {
            path: "csv".into(),
            source: std::io::Error::other(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
