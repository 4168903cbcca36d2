use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("{path}:{line}: {msg}")]
    ConfigParse { path: String, line: usize, msg: String },

    #[error("empty batch")]
    EmptyBatch,

    #[error("task {0} has no personalized model in memory")]
    MissingMemory(usize),

    #[error("no inner-step output supplied for sampled task {0}")]
    MissingInnerStep(usize),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub(crate) fn non_finite(ctx: impl Into<String>) -> Self {
        Error::NonFinite(ctx.into())
    }
}
