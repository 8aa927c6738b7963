use thiserror::Error;

use crate::config::Origin;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config key '{key}' ({origin}): {message}")]
    Config { key: String, origin: Origin, message: String },
    #[error("expression '{expr}': {message}")]
    Expression { expr: String, message: String },
    #[error("{0}")]
    Core(#[from] hurstsense::Error),
    #[error("i/o: {0}")]
    Io(String),
    #[error("{0}")]
    Invalid(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
