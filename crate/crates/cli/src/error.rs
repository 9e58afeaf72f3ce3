use thiserror::Error;

/// Failure of a subcommand, split by exit status.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input, configuration or file system state.
    #[error("{0}")]
    User(String),
    /// A broken internal invariant.
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::User(_) => 1,
            CliError::Internal(_) => 2,
        }
    }
}

impl From<mmd_sense::Error> for CliError {
    fn from(e: mmd_sense::Error) -> Self {
        match e {
            mmd_sense::Error::NonFiniteGradient => CliError::Internal(e.to_string()),
            other => CliError::User(other.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
