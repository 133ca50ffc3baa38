//! Classification-ranking combination losses for click-through-rate
//! prediction under sparse positive feedback.
//!
//! - [`losses`]: loss values with closed-form per-logit gradients
//! - [`model`]: hashed-embedding MLP with manual backprop, SGD/Adam, training loop
//! - [`data`]: synthetic and CSV datasets, positive weighting, negative sampling
//! - [`metrics`]: AUC, weighted LogLoss, calibration-bias buckets
//! - [`diagnostics`]: finite-difference checks, gradient-norm statistics,
//!   direction and dominance audits, loss-landscape slices

pub mod data;
pub mod diagnostics;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod numeric;

pub use losses::{LabeledBatch, LossError, LossKind, LossOutput, LossSpec};
