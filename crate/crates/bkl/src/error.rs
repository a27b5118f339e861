use thiserror::Error;

pub type Result<T> = std::result::Result<T, BklError>;

#[derive(Debug, Error)]
pub enum BklError {
    /// A constructor or operation received arguments outside its domain.
    #[error("domain error: {0}")]
    Domain(String),
    /// The model or law does not satisfy a hypothesis the operation needs.
    #[error("precondition violated: {0}")]
    Precondition(String),
    /// An iterative or quadrature scheme failed to reach its tolerance.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// A Monte-Carlo routine could not collect enough accepted samples.
    #[error("insufficient sample: {0}")]
    InsufficientSample(String),
    /// Experiment configuration is malformed or inconsistent.
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl BklError {
    pub fn domain(msg: impl Into<String>) -> Self {
        BklError::Domain(msg.into())
    }
    pub fn precondition(msg: impl Into<String>) -> Self {
        BklError::Precondition(msg.into())
    }
    pub fn numerical(msg: impl Into<String>) -> Self {
        BklError::Numerical(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        BklError::Config(msg.into())
    }
    pub fn insufficient(msg: impl Into<String>) -> Self {
        BklError::InsufficientSample(msg.into())
    }
}
