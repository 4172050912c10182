//! Shared error type for every module in the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by the numeric routines, losses, metrics, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("shape mismatch: {left} vs {right}")]
    ShapeMismatch { left: String, right: String },

    #[error("degenerate vector: zero Euclidean norm")]
    DegenerateVector,

    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty foreground partition: no depth value exceeds the threshold")]
    EmptyForeground,

    #[error("no foreground: every patch mask value is zero")]
    NoForeground,

    #[error("empty batch")]
    EmptyBatch,

    #[error(
        "Sinkhorn did not converge: marginal residual {residual:.3e} after {iterations} iterations"
    )]
    NotConverged { residual: f64, iterations: usize },

    #[error("undefined recall: ground truth has no foreground pixels")]
    UndefinedRecall,

    #[error("training diverged at step {step}: total loss {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("image dimensions {width}x{height} not divisible into a {grid_h}x{grid_w} patch grid (height must be a multiple of {grid_h}, width of {grid_w})")]
    NotDivisible {
        width: usize,
        height: usize,
        grid_h: usize,
        grid_w: usize,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {message}")]
    Image { path: String, message: String },
}
