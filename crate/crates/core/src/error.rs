use thiserror::Error;

/// Errors surfaced by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("under-determined regression: {rows} samples for {cols} basis functions")]
    UnderDetermined { rows: usize, cols: usize },

    #[error("non-finite value in {what} at time step {step}")]
    NonFinite { what: &'static str, step: usize },

    #[error("not available: {0}")]
    NotAvailable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
