//! Numerical core of a foreground-consistent matting/segmentation trainer:
//! depth-aware feature distillation, adversarial (gradient-reversal) and
//! optimal-transport domain alignment, prediction-loss heads, the paired
//! foreground compositor, and the full matting/DIS evaluation-metric suite.
//!
//! Everything is desk-scale and deterministic: losses ship analytic
//! gradients verified by central finite differences, the Sinkhorn solver is
//! checked against a brute-force linear-programming oracle, and the metrics
//! satisfy exact identity contracts. See the `examples/` directory for one
//! runnable walkthrough per capability and the `fclm` binary for the batch
//! CLI.

pub mod adversarial;
pub mod cli;
pub mod compositor;
pub mod depth_distill;
pub mod error;
pub mod fg_align;
pub mod io;
pub mod metrics_dis;
pub mod metrics_matting;
pub mod numerics;
pub mod pred_loss;
pub mod toy_harness;
pub mod verify;

pub use error::{Error, Result};
