use std::fmt;
use std::process::ExitCode;

use lunet_core::Error;

/// Failure class, mapped to the process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Failure {
    Other = 1,
    Config = 2,
    Data = 3,
    Numeric = 4,
    Gradcheck = 5,
}

#[derive(Debug)]
pub struct CliError {
    pub failure: Failure,
    pub stage: String,
    pub message: String,
}

impl CliError {
    pub fn new(failure: Failure, stage: impl Into<String>, message: impl Into<String>) -> Self {
        Self { failure, stage: stage.into(), message: message.into() }
    }

    pub fn config(stage: impl Into<String>, message: impl Into<String>) -> Self {
        Self::new(Failure::Config, stage, message)
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.failure as u8)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} failed: {}", self.stage, self.message)
    }
}

impl std::error::Error for CliError {}

/// Tags a core error with the stage it happened in. Non-finite values always
/// classify as numeric failures.
pub trait StageExt<T> {
    fn stage(self, failure: Failure, stage: &str) -> Result<T, CliError>;
}

impl<T> StageExt<T> for Result<T, Error> {
    fn stage(self, failure: Failure, stage: &str) -> Result<T, CliError> {
        self.map_err(|e| {
            let failure = if matches!(e, Error::NonFinite(_)) { Failure::Numeric } else { failure };
            CliError::new(failure, stage, e.to_string())
        })
    }
}

impl<T> StageExt<T> for std::io::Result<T> {
    fn stage(self, failure: Failure, stage: &str) -> Result<T, CliError> {
        self.map_err(|e| CliError::new(failure, stage, e.to_string()))
    }
}
