use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor or image dimensions do not satisfy an operation's contract.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// An API precondition unrelated to shapes was violated.
    #[error("contract error: {0}")]
    Contract(String),

    /// File could not be read or written.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A serialized artifact (checkpoint, loss table, config) is malformed.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    /// A dataset problem, carrying the offending file or directory.
    #[error("data error: {0}")]
    Data(String),

    /// The request would exceed a hard resource limit.
    #[error("resource error: {0}")]
    Resource(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
