//! Numerical core for modeling item-response data from preposition-learning
//! experiments.
//!
//! Everything here is `no_std` + `alloc`: the domain types and table
//! operations, design-matrix encoding, the hierarchical Bayesian logistic
//! model fitted by stochastic variational inference, effect-size reporting,
//! the MLP comparator and the synthetic data generator. File formats, the
//! experiment harness and the CLI live in the `prepstudy` crate.

#![no_std]
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod bayes;
pub mod design;
pub mod effects;
pub mod error;
pub mod math;
pub mod mlp;
pub mod optim;
pub mod record;
pub mod rng;
pub mod split;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
