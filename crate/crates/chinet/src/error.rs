use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum ChiError {
    #[error("dimension mismatch: {0}")]
    Dim(String),

    #[error("numerical error: {0}")]
    Numeric(String),

    #[error("size guard exceeded: {0}")]
    SizeGuard(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ChiError>;

impl ChiError {
    /// Process exit code for the CLI: usage/config problems exit 2,
    /// data and numeric problems exit 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            ChiError::Config(_) => 2,
            _ => 1,
        }
    }
}
