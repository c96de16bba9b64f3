//! Experiment driver behind the `hrvae` binary.

pub mod commands;
pub mod config;

use std::fmt;

pub use commands::{compare, eval, reconstruct, train, TrainOutcome};
pub use config::ExperimentConfig;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_MISMATCH: u8 = 3;
pub const EXIT_NUMERICAL: u8 = 4;

/// Failure with the process exit code it maps to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn mismatch(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_MISMATCH,
            message: message.into(),
        }
    }

    /// Prefixes the message with what was being done, keeping the code.
    pub fn context(self, what: impl fmt::Display) -> Self {
        Self {
            code: self.code,
            message: format!("{what}: {}", self.message),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<hrvae::Error> for CliError {
    fn from(err: hrvae::Error) -> Self {
        use hrvae::Error as E;
        let code = match &err {
            E::Contract(_) | E::Parse(_) | E::Io(_) => EXIT_CONFIG,
            E::Checkpoint(_) | E::ConfigMismatch(_) => EXIT_MISMATCH,
            E::NonFinite(_) => EXIT_NUMERICAL,
            E::Autograd(hrvae::autodiff::AutogradError::Domain { .. }) => EXIT_NUMERICAL,
            E::Autograd(_) => 1,
        };
        Self {
            code,
            message: err.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        Self::config(err.to_string())
    }
}
