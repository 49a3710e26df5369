use std::io;

use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    /// Bad magic, unsupported version, truncated payload or otherwise malformed file.
    #[error("format error: {0}")]
    Format(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    /// A parameter outside of its admissible range.
    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("empty scene")]
    EmptyScene,

    #[error("row {row} has zero norm")]
    ZeroNormRow { row: usize },

    /// Missing inputs or inconsistent configuration detected before any compute.
    #[error("config error: {0}")]
    Config(String),

    /// Loss or parameters became non-finite during optimization.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

pub(crate) fn dim_err(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}
