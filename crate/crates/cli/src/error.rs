use std::path::{Path, PathBuf};

use thiserror::Error;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    NotPe(String),

    #[error("{0}")]
    Infeasible(String),

    #[error("{0}")]
    Divergence(String),

    #[error(transparent)]
    Core(ddvel::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit code.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::NotPe(_) => 3,
            CliError::Infeasible(_) => 4,
            CliError::Divergence(_) => 5,
            CliError::Core(_) => 1,
        }
    }
}

impl From<ddvel::Error> for CliError {
    fn from(e: ddvel::Error) -> Self {
        match e {
            ddvel::Error::NotPersistentlyExciting { .. } => CliError::NotPe(e.to_string()),
            ddvel::Error::Infeasible(_) => CliError::Infeasible(e.to_string()),
            ddvel::Error::Io { .. } | ddvel::Error::Csv(_) | ddvel::Error::Schema(_) | ddvel::Error::Gap { .. } => {
                CliError::Config(e.to_string())
            }
            other => CliError::Core(other),
        }
    }
}
