use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Errors surfaced by the command line; each maps to an exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Validation(String),
}

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn validation(e: impl std::fmt::Display) -> Self {
        CliError::Validation(e.to_string())
    }

    /// 1 for I/O failures, 2 for invalid input.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io { .. } => 1,
            CliError::Validation(_) => 2,
        }
    }
}
