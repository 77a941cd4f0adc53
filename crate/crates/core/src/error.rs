use thiserror::Error;

use crate::binfmt::FormatError;
use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("token {index} out of range for codebook of size {codebook}")]
    TokenOutOfRange { index: usize, codebook: usize },
    #[error("dimension mismatch: expected multiple of {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("unknown mapping kind {0:?}")]
    UnknownMapping(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{0}")]
    Shape(String),
    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),
    #[error("{0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;
