//! Temporal sigmoid belief networks with conditional (per-style) weights.
//!
//! A model instance is a directed generative network over binary hidden
//! state sequences and real, binary, or count observation sequences. Every
//! weight matrix is conditioned on a per-frame style vector `y_t`, either as
//! one dense slice per style or as a three-factor low-rank product shared
//! across styles. Training uses a variational lower bound with a learned
//! per-step baseline and score-function gradients for the recognition
//! network (NVIL).
//!
//! Module map:
//! - [`cond_weight`]: style-conditioned weight operators (dense / factored)
//! - [`model`]: generative distribution (prior logits, emissions, sampling)
//! - [`recognition`]: factorized posterior approximation
//! - [`nvil`]: bound estimator, gradients, baseline, RMSprop, training loop
//! - [`deep`]: stacked hidden layers sharing the same wiring per layer
//! - [`semi`]: windowed style classifier and semi-supervised objectives
//! - [`data`]: CSV datasets, normalization, planted models, checkpoints
//! - [`enumerate`]: exact marginals and posteriors for tiny instances
//! - [`gradcheck`]: finite-difference verification of analytic gradients

pub mod cond_weight;
pub mod data;
pub mod deep;
pub mod dims;
pub mod enumerate;
pub mod error;
pub mod gradcheck;
pub mod madds;
pub mod model;
pub mod nvil;
pub mod params;
pub mod recognition;
pub mod schedule;
pub mod semi;
pub mod util;

pub use dims::{Dims, ObsKind};
pub use error::{Error, Result};
