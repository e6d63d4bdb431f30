//! Workspace-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An action contained NaN/inf channels.
    #[error("invalid action: {0}")]
    InvalidAction(String),

    /// A task's preconditions do not hold in the given state.
    #[error("infeasible task: {0}")]
    InfeasibleTask(String),

    /// A chain references an unknown task or fails validation structurally.
    #[error("invalid chain: {0}")]
    InvalidChain(String),

    /// Chain generation or feasible-start sampling exhausted its retry cap.
    #[error("generation failed: {0}")]
    Generation(String),

    /// No object-state change found, so no cutting point exists.
    #[error("undecomposable trajectory: {0}")]
    Undecomposable(String),

    /// On-disk container is corrupt, truncated, or version-mismatched.
    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A numeric precondition failed (zero-norm embedding, sigma <= 0, ...).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Training produced a non-finite loss.
    #[error("divergence: {0}")]
    Divergence(String),

    /// An ablation row's checkpoint is missing.
    #[error("missing checkpoint for row '{0}'")]
    MissingCheckpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
