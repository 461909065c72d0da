use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("action out of bounds: {0}")]
    OutOfBounds(String),
    #[error("empty: {0}")]
    Empty(String),
    #[error("unknown episode {0}")]
    UnknownEpisode(u64),
    #[error("no stored prediction covers step {0}")]
    NoCoveringPrediction(u64),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad file format: {0}")]
    BadFormat(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
