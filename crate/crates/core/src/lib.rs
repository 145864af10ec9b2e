//! Regularized LSTD policy evaluation with random features, together with the
//! random-matrix deterministic equivalents of its resolvent, empirical and true
//! mean-squared Bellman errors, and mean-squared value error.
//!
//! The crate is organised bottom-up:
//!
//! - [`mrp`]: Markov reward processes, ground truth (stationary distribution,
//!   value function) and on-policy sample paths.
//! - [`features`]: random feature maps `σ(Ws)` and the expected Gram kernel Φ in
//!   closed form and by Monte Carlo.
//! - [`lstd`]: empirical operators built from a sample path, the regularized LSTD
//!   solve and the error metrics of a fitted parameter vector.
//! - [`theory`]: the correction factor δ, the deterministic resolvent and the
//!   asymptotic error curves with their second-order corrections.
//! - [`sweep`]: the seeded experiment harness behind the `rflstd` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod features;
pub mod linalg;
pub mod lstd;
pub mod mrp;
pub mod rng;
pub mod sweep;
pub mod theory;

pub use error::{Error, Result};
