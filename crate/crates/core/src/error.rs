use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("codebook/latent dim mismatch: codebook has d={codebook}, latent has d={latent}")]
    DimMismatch { codebook: usize, latent: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("token {token} out of range for vocabulary of {vocab} (+ mask sentinel)")]
    TokenOutOfRange { token: u32, vocab: usize },

    #[error("mask sentinel present where a mask-free grid is required ({0})")]
    MaskSentinel(&'static str),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error("invalid configuration key `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn range(msg: impl Into<String>) -> Self {
        Error::OutOfRange(msg.into())
    }

    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }
}
