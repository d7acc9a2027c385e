//! Variational Bayesian neural networks trained with divergence-regularized
//! losses: the KL evidence lower bound, a closed-form geometric
//! Jensen-Shannon loss and a bounded mixture Jensen-Shannon loss.

// `!(x > 0.0)` is used on purpose so NaN fails the same checks
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod data;
pub mod divergence;
pub mod error;
pub mod experiment;
pub mod fixtures;
pub mod gaussian;
pub mod loss;
pub mod metrics;
pub mod network;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
