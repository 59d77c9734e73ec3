use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("missing input {path}: {hint}")]
    MissingInput { path: PathBuf, hint: &'static str },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] ncpvi::Error),
}

impl CliError {
    /// 1 for usage, config and input problems; 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(ncpvi::Error::Numerical(_) | ncpvi::Error::NotPositiveDefinite { .. }) => 2,
            _ => 1,
        }
    }
}
