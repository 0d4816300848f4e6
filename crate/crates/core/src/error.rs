use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("mesh has no non-degenerate faces")]
    DegenerateMesh,

    #[error("weights container: {0}")]
    Container(String),

    #[error("architecture mismatch: expected `{expected}`, found `{found}`")]
    ArchitectureMismatch { expected: String, found: String },

    #[error("input channel `{0}` is not produced by the featurizer")]
    UnknownChannel(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("dataset: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}
