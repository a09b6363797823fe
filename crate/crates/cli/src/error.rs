use rvpo_core::RvpoError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input, configuration, or arguments.
    #[error("{0}")]
    Validation(String),
    /// Numeric failure or I/O trouble while running.
    #[error("{0}")]
    Runtime(String),
    /// One or more verification properties failed.
    #[error("{0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Verification(_) => 3,
        }
    }

    pub fn validation(context: &str, err: impl std::fmt::Display) -> Self {
        CliError::Validation(format!("{context}: {err}"))
    }
}

impl From<RvpoError> for CliError {
    fn from(e: RvpoError) -> Self {
        match e {
            RvpoError::NonFiniteAdvantage { .. } => CliError::Runtime(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("io: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(format!("csv: {e}"))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
