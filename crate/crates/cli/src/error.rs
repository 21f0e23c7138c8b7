use std::path::{Path, PathBuf};

use reparam_core::Error as CoreError;
use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 1 for bad input, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse { .. } | CliError::Validation(_) => 1,
            CliError::Io { .. } => 2,
            CliError::Core(e) => match e {
                CoreError::InvalidSpec(_)
                | CoreError::InvalidConfig(_)
                | CoreError::EmptyGraph
                | CoreError::IndexOutOfRange { .. }
                | CoreError::SelfLoop(_)
                | CoreError::NonPositiveWeight { .. }
                | CoreError::AsymmetricInput
                | CoreError::Parse { .. } => 1,
                _ => 2,
            },
        }
    }
}
