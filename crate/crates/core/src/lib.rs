//! Infinite-width kernels and leading finite-width corrections for Bayesian
//! neural networks with a fully connected linear readout and Gaussian
//! likelihood, together with the empirical estimators needed to validate the
//! analytic formulas:
//!
//! - [`mathcore`] — dense linear-algebra and Gaussian-moment primitives
//!   (Gram matrices, Isserlis pairings, Neumann / log-det series, spectra).
//! - [`gpkernels`] — infinite-width kernels for deep linear MLPs, deep linear
//!   CNNs with circular padding, single nonlinear hidden layers, and linear
//!   networks with arbitrary forward skip connections.
//! - [`priorcumulants`] — leading prior covariances of the hidden-layer
//!   kernels, the inputs to the posterior correction, plus a Monte-Carlo
//!   ground-truth generator.
//! - [`corrections`] — the leading `O(1/n)` posterior kernel corrections and
//!   their high/low-temperature limits.
//! - [`predictor`] — predictor statistics with `O(1/n)` corrections,
//!   bias–variance decompositions, and consistency checks against
//!   independently published zero-temperature results.
//! - [`sampler`] — Euler–Maruyama Langevin chains over network parameters and
//!   an exact-readout importance-sampling oracle.
//!
//! The crate is `no_std` (alloc required); file formats, CLI, and parallel
//! execution live in the companion `widthfx` crate.

#![no_std]
#![deny(unsafe_code)]
// `!(x > 0.0)` guards reject NaN where `x <= 0.0` would accept it.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod corrections;
pub mod error;
pub mod gpkernels;
pub mod mat;
pub mod mathcore;
pub mod predictor;
pub mod priorcumulants;
pub mod rng;
pub mod sampler;

pub use error::{CoreError, Result};
pub use mat::Mat;
