use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration:\n{0}")]
    Config(String),

    #[error("cannot read config {path}: {source}")]
    ConfigRead {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("statistical acceptance failed: {0}")]
    Statistical(String),

    #[error("cannot write {path}: {message}")]
    Output { path: PathBuf, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::ConfigRead { .. } => 2,
            CliError::Numerical(_) => 3,
            CliError::Statistical(_) => 4,
            CliError::Output { .. } => 1,
        }
    }
}

impl From<photocount::Error> for CliError {
    fn from(e: photocount::Error) -> Self {
        CliError::Numerical(e.to_string())
    }
}
