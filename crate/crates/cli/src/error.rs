use std::path::PathBuf;

use thiserror::Error;

/// Errors of the experiment runner, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, an unparseable config or a malformed input file.
    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    /// A design or evaluation step failed inside a trial.
    #[error("{0}")]
    Failed(String),

    #[error(transparent)]
    Core(#[from] wcum_core::Error),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self::Usage(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
