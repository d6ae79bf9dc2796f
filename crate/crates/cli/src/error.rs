use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] majorant_core::Error),
}

impl CliError {
    /// 2 for a rejected configuration, 3 when a hypothesis behind the bounds
    /// fails, 1 for anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(majorant_core::Error::InvalidParameter(_)) => 2,
            CliError::Core(e) if e.is_hypothesis_violation() => 3,
            CliError::Io(_) | CliError::Core(_) => 1,
        }
    }
}
