//! Error type shared across the crate.
//!
//! Variants are grouped by how a caller should react: `Config`/`Shape` mean
//! the request itself was malformed, `Numeric` means a computation left the
//! finite domain, and `Io`/`Format` mean an artifact on disk could not be
//! read or written.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or argument values (bad dimensions, ranges,
    /// unknown names).
    #[error("config error: {0}")]
    Config(String),

    /// An array argument had the wrong shape for the requested operation.
    #[error("shape error: {0}")]
    Shape(String),

    /// A computation produced or received non-finite or out-of-domain
    /// values (NaN bound, non-binary hidden state, negative counts).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Filesystem failure while reading or writing an artifact.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// An artifact was readable but its contents violate the format
    /// (bad CSV row, bad manifest, truncated blob, version mismatch).
    #[error("format error in {path}: {msg}")]
    Format { path: String, msg: String },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Format { path: path.into(), msg: msg.into() }
    }
}
