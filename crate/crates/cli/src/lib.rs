//! Experiment harness around `widthfx-core`: dataset construction (synthetic
//! Gaussian tasks and IDX/MNIST ingestion), config-driven width sweeps with
//! theory/importance/Langevin estimators, machine-readable reports, and the
//! binary chain-trace stream.

// `!(x > 0.0)` guards reject NaN where `x <= 0.0` would accept it.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod data;
pub mod error;
pub mod fit;
pub mod par;
pub mod runner;
pub mod trace;

pub use error::{AppError, Result};
