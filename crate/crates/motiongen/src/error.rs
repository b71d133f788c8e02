//! Crate-wide error taxonomy.
//!
//! Four categories, mirrored by the CLI exit codes: configuration errors
//! (bad or inconsistent settings), data errors (malformed files, shape
//! mismatches in stored artifacts), I/O errors (with the path or context
//! attached), and numerical errors (factorization failures, divergence).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed or inconsistent data artifact.
    #[error("data error: {0}")]
    Data(String),

    /// I/O failure with the offending path or operation attached.
    #[error("io error ({context}): {source}")]
    Io {
        source: std::io::Error,
        context: String,
    },

    /// Numerical failure: factorization breakdown, non-finite loss.
    #[error("numerical error: {0}")]
    Numerical(String),
}

impl Error {
    pub fn io(source: std::io::Error, context: impl Into<String>) -> Self {
        Error::Io {
            source,
            context: context.into(),
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
