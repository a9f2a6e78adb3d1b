//! Error type shared by every stage of the pipeline.

use thiserror::Error;

/// Failure modes of the library and the command-line front end.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is out of range or inconsistent.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    /// An argument violates a precondition of the called operation.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// Two inputs that must agree in length do not.
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch {
        /// Length required by the operation.
        expected: usize,
        /// Length actually supplied.
        found: usize,
    },
    /// A file does not match the expected layout, version or provenance.
    #[error("format mismatch: {0}")]
    Format(String),
    /// A least-squares fit did not converge or produced an unusable result.
    #[error("fit failed: {0}")]
    Fit(String),
    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the `fdm` binary for this error.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::InvalidConfig(_) | Error::InvalidInput(_) | Error::LengthMismatch { .. } => 2,
            Error::Format(_) => 3,
            Error::Fit(_) => 4,
            Error::Io(_) => 1,
        }
    }
}

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
