use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("unsupported codec in {path}: {reason}")]
    UnsupportedCodec { path: PathBuf, reason: String },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric error in layer {layer}: {reason}")]
    Numeric { layer: usize, reason: String },
    #[error("transfer error: architectures differ ({})", .mismatches.join("; "))]
    Transfer { mismatches: Vec<String> },
    #[error("undefined reference: WER needs at least one reference word")]
    UndefinedReference,
    #[error("data error: {0}")]
    Data(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    /// Process exit status for command-line front ends: 2 for configuration
    /// problems, 3 for everything caused by input data or the file system.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Transfer { .. } => 2,
            _ => 3,
        }
    }
}
