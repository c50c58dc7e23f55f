use thiserror::Error;

/// Errors raised by the dose-finding engine.
#[derive(Debug, Error)]
pub enum Error {
    /// An input lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A configuration value violates its invariants.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// An operation was called in a state that does not permit it.
    #[error("invalid state: {0}")]
    State(String),
    /// Arguments are individually valid but inconsistent with each other.
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
