//! Error families and the process exit-code contract.
//!
//! | code | family | examples |
//! |------|--------|----------|
//! | 0 | success | |
//! | 1 | internal / numerical | non-finite loss, decomposition failure |
//! | 2 | invalid rank or argument | rank exceeding a mode extent, bad flag combinations (also used by the argument parser) |
//! | 3 | parse | malformed CSV cell, bad config key, corrupt container |
//! | 4 | data | empty split, series shorter than one window |
//! | 5 | I/O | missing file, unwritable output directory |
//!
//! Every error prints to stderr as a single line `error kind=<family> msg="…"`.

use tea_core::error::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid rank: {0}")]
    InvalidRank(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn parse(msg: impl Into<String>) -> Self {
        CliError::Parse(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::InvalidRank(_) => 2,
            CliError::Parse(_) => 3,
            CliError::Data(_) => 4,
            CliError::Io(_) => 5,
            CliError::Numerical(_) | CliError::Other(_) => 1,
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            CliError::InvalidRank(_) => "invalid-rank",
            CliError::Parse(_) => "parse",
            CliError::Data(_) => "data",
            CliError::Io(_) => "io",
            CliError::Numerical(_) => "numerical",
            CliError::Other(_) => "internal",
        }
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::InvalidRank { .. } | TensorError::InvalidMode { .. } => {
                CliError::InvalidRank(e.to_string())
            }
            TensorError::NumericalError(_) => CliError::Numerical(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
