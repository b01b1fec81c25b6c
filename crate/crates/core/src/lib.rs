//! Loss max-pooling for dense prediction.
//!
//! Per-pixel losses are reduced by maximizing a weighted sum over the convex
//! set of weightings `{w : ||w||_p <= gamma, ||w||_inf <= tau}`. The result
//! upper-bounds the plain mean and shifts weight toward high-loss pixels, which
//! in segmentation are disproportionately the pixels of rare classes.
//!
//! - [`solver`]: closed-form pooled loss, optimal weights, dual and gradient.
//! - [`pixel`]: softmax cross-entropy per pixel and the chain rule back to
//!   logits.
//! - [`sampler`]: IoU-driven complementary crop sampling.
//! - [`data`], [`train`]: synthetic long-tail segmentation task and a small
//!   SGD training harness.
//! - [`curves`]: optimal weight profiles over `(p, m)` grids.

pub mod config;
pub mod curves;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod par;
pub mod pixel;
pub mod sampler;
pub mod solver;
pub mod sum;
pub mod train;

pub use config::{derive_parameters, MSpec, PoolingConfig, PoolingParams};
pub use error::{Error, Result};
pub use losses::LossVector;
pub use par::Execution;
pub use solver::{
    dual_objective, eta, gradient_wrt_losses, normalize_then_solve, solve_pool, uniform_pool,
    SolveOutcome,
};
