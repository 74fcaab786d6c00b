use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("invalid box ({x1}, {y1}, {x2}, {y2}): corners out of order or non-finite")]
    InvalidBox { x1: f64, y1: f64, x2: f64, y2: f64 },

    #[error("no seed boxes available for image {0}")]
    NoSeeds(String),

    #[error("non-finite loss at image {image}, {stage}")]
    NonFinite { image: String, stage: String },

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::Shape {
            expected: expected.into(),
            got: got.into(),
        }
    }
}
