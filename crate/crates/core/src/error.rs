//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by simulator components.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied shape, size, or setting is inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// Matrix/vector dimensions do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An iterative numerical routine failed to converge or produced
    /// non-finite values.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A task loss is zero or negative, so a loss-normalized quantity is
    /// undefined for it.
    #[error("degenerate loss for task {task}: {loss}")]
    DegenerateLoss { task: usize, loss: f64 },

    /// A runtime invariant (e.g. double stochasticity of a mixing matrix)
    /// was violated; the epoch must be aborted.
    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
