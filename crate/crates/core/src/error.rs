use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("payload length mismatch: header dims need {expected} bytes, found {found}")]
    PayloadMismatch { expected: usize, found: usize },
    #[error("unsupported dtype `{0}`")]
    UnsupportedDtype(String),
    #[error("unexpected container semantic: expected {expected}, found {found}")]
    Semantic { expected: String, found: String },
    #[error("invalid protocol: {0}")]
    Protocol(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("unknown segment id {0}")]
    UnknownSegment(u32),
    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
