use thiserror::Error;

/// Errors raised across the crate, grouped by what went wrong rather than
/// where it happened.
#[derive(Debug, Error)]
pub enum ProcanError {
    /// Tensor shapes do not line up for the requested operation.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// A configuration value is out of range or inconsistent.
    #[error("configuration error: {0}")]
    Config(String),
    /// Input data violates an invariant (bad record, malformed file).
    #[error("data error: {0}")]
    Data(String),
    /// An operation was applied to a state that does not admit it.
    #[error("state error: {0}")]
    State(String),
    /// The caller misused an API (wrong argument, wrong call order).
    #[error("usage error: {0}")]
    Usage(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ProcanError>;

impl ProcanError {
    pub fn dimension(msg: impl Into<String>) -> Self {
        ProcanError::Dimension(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        ProcanError::Config(msg.into())
    }
    pub fn data(msg: impl Into<String>) -> Self {
        ProcanError::Data(msg.into())
    }
    pub fn state(msg: impl Into<String>) -> Self {
        ProcanError::State(msg.into())
    }
    pub fn usage(msg: impl Into<String>) -> Self {
        ProcanError::Usage(msg.into())
    }
}
