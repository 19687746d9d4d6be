use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Format { path: PathBuf, line: usize, msg: String },
    #[error("solver failure: {0}")]
    Solver(pfrecon_core::Error),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 2 for bad input, 3 for solver or IO failures, 4 for failed checks.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::Format { .. } => 2,
            CliError::Io { .. } | CliError::Solver(_) => 3,
            CliError::Verification(_) => 4,
        }
    }
}

impl From<pfrecon_core::Error> for CliError {
    fn from(e: pfrecon_core::Error) -> Self {
        match e {
            pfrecon_core::Error::InvalidInput(msg) | pfrecon_core::Error::Geometry(msg) => CliError::Validation(msg),
            other => CliError::Solver(other),
        }
    }
}
