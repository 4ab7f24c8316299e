//! Shared error type for the toolkit.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("empty corpus: {0}")]
    EmptyCorpus(String),

    #[error("byte 0x{byte:02x} is not in the vocabulary")]
    UnknownSymbol { byte: u8 },

    #[error("format error: {0}")]
    Format(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("training diverged at iteration {iteration}: {what}")]
    Divergence { iteration: u64, what: String },

    #[error("budget exceeded: {0}")]
    Budget(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
