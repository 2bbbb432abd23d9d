//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FbrError {
    /// Caller passed a value outside an operation's documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Input is structurally valid but degenerate (zero norm, empty set).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// A declared pre/post condition does not hold.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Requested class has no usable pixels in the current batch.
    #[error("class {0} absent from batch")]
    ClassAbsent(usize),

    /// Seed map has no background pixels to cluster.
    #[error("no background pixels in seed map")]
    EmptyBackground,

    /// Memory bank holds no entries to sample from.
    #[error("memory bank is empty")]
    EmptyBank,

    /// Fewer than two foreground classes present; no graph can be built.
    #[error("need at least two present classes, got {0}")]
    InsufficientClasses(usize),

    /// Every candidate negative list is empty.
    #[error("negative pool is empty")]
    EmptyPool,

    /// Shape placement failed after bounded retries.
    #[error("sample generation failed: {0}")]
    Generation(String),

    /// Trimap band is undefined because the reference mask has no boundary.
    #[error("mask has no inter-class boundary")]
    NoBoundary,

    /// Malformed or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, FbrError>;
