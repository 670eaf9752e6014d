use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (bad action index, stepping a finished episode, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid configuration or an unknown tag in a config document.
    #[error("config error: {0}")]
    Config(String),

    /// A scalar or gradient became NaN or infinite.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A linear system could not be solved (for example a discount of 1).
    #[error("singular system: {0}")]
    Singular(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
