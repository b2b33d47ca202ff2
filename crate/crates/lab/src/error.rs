use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: field {field}: {message}")]
    Field {
        path: PathBuf,
        line: usize,
        field: usize,
        message: String,
    },
    #[error("{path}:{line}: {message}")]
    Line {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] pip_core::Error),
    #[error("{0}")]
    Check(String),
}

pub type Result<T, E = LabError> = std::result::Result<T, E>;

impl LabError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        LabError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit status: 1 for invalid configuration or arguments, 2 for
    /// failures while running.
    pub fn exit_code(&self) -> i32 {
        use pip_core::Error as E;
        match self {
            LabError::Config(_) => 1,
            LabError::Core(E::Contract(_) | E::Capacity { .. } | E::Length { .. }) => 1,
            _ => 2,
        }
    }
}
