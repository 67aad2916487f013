use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("non-finite target (particle {particle})")]
    NonFiniteTarget { particle: usize },
    #[error("integrity error at byte offset {offset}: {reason}")]
    Integrity { offset: u64, reason: String },
    #[error("not ready: {0}")]
    NotReady(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Shape(_) | Error::Unsupported(_) => 2,
            _ => 3,
        }
    }
}
