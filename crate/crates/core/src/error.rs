use thiserror::Error;

use crate::autodiff::AutogradError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Autograd(#[from] AutogradError),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
