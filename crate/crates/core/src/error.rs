//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, PwdError>;

#[derive(Debug, Clone, Error)]
pub enum PwdError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("insufficient data: needed {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("degenerate statistics: {0}")]
    Degenerate(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("optimization failed: {0}")]
    OptimizationFailed(String),

    #[error("panel error: {0}")]
    Panel(String),

    #[error("unknown name: {0}")]
    UnknownName(String),
}
