//! Error type shared by all tensor and model operations.

use alloc::string::String;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TensorError {
    #[error("mode {mode} out of range for order-{order} tensor")]
    InvalidMode { mode: usize, order: usize },

    #[error("shape mismatch: {0}")]
    ShapeError(String),

    #[error("rank {rank} invalid for mode of extent {extent}")]
    InvalidRank { rank: usize, extent: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("decomposition failed: {0}")]
    DecompositionError(String),

    #[error("non-finite value encountered in {0}")]
    NumericalError(String),
}

pub type Result<T> = core::result::Result<T, TensorError>;
