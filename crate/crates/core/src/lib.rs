//! Real-time Bayesian inference for linear time-invariant systems.
//!
//! The observation and QoI maps of a discretized wave model are assembled
//! once as block-Toeplitz operators. A data-space factorization then turns
//! each new set of observations into a MAP estimate, a QoI forecast and
//! credible intervals without any further time marching.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod assembly;
pub mod bayes;
pub mod config;
pub mod error;
pub mod field;
pub mod oracle;
pub mod persist;
pub mod pipeline;
pub mod prior;
pub mod toeplitz;
pub mod wave;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use field::SpaceTimeField;
pub use toeplitz::{AnticausalToeplitz, BlockToeplitzMap};

#[cfg(test)]
mod test_support;
