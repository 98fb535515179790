use std::path::PathBuf;

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] ivit_core::Error),

    #[error("output directory {0} is in use by another run (remove .lock if it is stale)")]
    Locked(PathBuf),

    #[error("gradient check failed: max relative error {error:.3e} exceeds {limit:e}")]
    Tolerance { error: f64, limit: f64 },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl CliError {
    /// 2 configuration, 3 numeric failure, 4 IO.
    pub fn exit_code(&self) -> u8 {
        use ivit_core::Error as E;
        match self {
            CliError::Core(E::Numeric(_)) | CliError::Tolerance { .. } => 3,
            CliError::Core(E::Io { .. } | E::Format(_) | E::Checkpoint { .. }) => 4,
            CliError::Locked(_) | CliError::Csv { .. } => 4,
            CliError::Core(_) => 2,
        }
    }
}

pub(crate) fn io_error(path: impl Into<PathBuf>, source: std::io::Error) -> CliError {
    CliError::Core(ivit_core::Error::Io {
        path: path.into(),
        source,
    })
}
