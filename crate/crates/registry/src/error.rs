use std::io;

use gmi_core::Schema;

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error(transparent)]
    Invalid(#[from] gmi_core::Error),
    #[error("model `{0}` is already registered")]
    Duplicate(String),
    #[error("model `{0}` not found")]
    NotFound(String),
    #[error("schema mismatch: registry holds {expected:?}, got {found:?}")]
    SchemaMismatch { expected: Schema, found: Schema },
    #[error("the registry holds no models")]
    Empty,
    #[error("corrupt registry state: {0}")]
    Corrupt(String),
    #[error("storage failure: {0}")]
    Io(#[from] io::Error),
}

impl RegistryError {
    /// True for errors caused by the caller's input.
    pub fn is_client_error(&self) -> bool {
        !matches!(self, RegistryError::Io(_) | RegistryError::Corrupt(_))
    }
}

pub type Result<T, E = RegistryError> = std::result::Result<T, E>;
