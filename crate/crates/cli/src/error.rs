use thiserror::Error;
use wdunet_al::AlError;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Data(_) => 3,
            Self::Runtime(_) => 4,
        }
    }

    /// Classifies an error raised while reading a dataset.
    pub fn data(e: AlError) -> Self {
        match e {
            AlError::Config(m) => Self::Config(m),
            other => Self::Data(other.to_string()),
        }
    }
}

impl From<AlError> for CliError {
    fn from(e: AlError) -> Self {
        match e {
            AlError::Config(_) | AlError::Resume(_) | AlError::Phantom { .. } => Self::Config(e.to_string()),
            AlError::Data(_) | AlError::Patch(_) | AlError::Volume(_) => Self::Data(e.to_string()),
            other => Self::Runtime(other.to_string()),
        }
    }
}
