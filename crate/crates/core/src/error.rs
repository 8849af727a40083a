//! Error types shared across the engine.

/// Errors raised while loading a checkpoint file. Each corruption mode is a
/// distinct variant so callers can tell a wrong file from a damaged one.
#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("bad magic bytes, not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated checkpoint: {0}")]
    Truncated(String),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A tensor was requested with a zero/negative extent or overflowing size.
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    /// Operands with incompatible shapes were combined.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    /// Configuration breaks a documented invariant (divisibility, widths, ...).
    #[error("invalid config: {0}")]
    Config(String),
    /// An API contract was violated (non-scalar loss, reused tape, ...).
    #[error("contract violation: {0}")]
    Contract(String),
    /// Dataset or input files are unusable.
    #[error("data error: {0}")]
    Data(String),
    /// Metric computation is undefined for the given predictions.
    #[error("metric error: {0}")]
    Metric(String),
    /// A numeric invariant failed at runtime (non-finite loss, ...).
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
