use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("check failed: {0}")]
    Check(String),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },

    #[error(transparent)]
    Core(#[from] outage_core::Error),
}

impl CliError {
    /// 2 for configuration problems, 3 for failed checks or numerical
    /// breakdown, 4 for file problems.
    pub fn exit_code(&self) -> i32 {
        use outage_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Check(_) => 3,
            CliError::Io { .. } => 4,
            CliError::Core(e) => match e {
                E::Config(_) | E::Argument(_) => 2,
                E::Degenerate(_) | E::NonFinite { .. } => 3,
                E::Format { .. } | E::Version { .. } | E::Io(_) => 4,
            },
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

pub type CliResult<T> = Result<T, CliError>;
