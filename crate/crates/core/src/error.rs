use thiserror::Error;

/// Errors raised by the particle system, the sampler and the execution backends.
#[derive(Debug, Error)]
pub enum SmcError {
    #[error("particle count must be at least 1")]
    EmptySystem,

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("weight normalization failed: {0}")]
    Normalization(&'static str),

    #[error("index {index} out of range for size {size}")]
    OutOfRange { index: usize, size: usize },

    #[error("replication counts sum to {sum}, expected {expected}")]
    CountSum { sum: usize, expected: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no initialization operation set")]
    MissingInit,

    #[error("sampler has not been initialized")]
    NotInitialized,

    #[error("no monitor named `{0}`")]
    UnknownMonitor(String),

    #[error("no record for iteration {0}")]
    MissingRecord(usize),

    #[error("kernel failed at particle {particle}: {message}")]
    Kernel { particle: usize, message: String },

    #[error(transparent)]
    User(#[from] Box<dyn std::error::Error + Send + Sync>),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = SmcError> = std::result::Result<T, E>;

impl SmcError {
    /// Wraps an arbitrary error raised by a user callback.
    pub fn user<E>(err: E) -> Self
    where
        E: Into<Box<dyn std::error::Error + Send + Sync>>,
    {
        SmcError::User(err.into())
    }
}
