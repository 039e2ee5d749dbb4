//! Gaussian moments by pairing enumeration.

use crate::error::{CoreError, Result};
use crate::mat::{self, Mat};
use alloc::vec::Vec;

/// Enumerating perfect pairings is factorial; 12 indices (10395 pairings)
/// covers the eighth moments needed by quartic activations with headroom.
pub const PAIRING_CAP: usize = 12;

/// Covariance of a zero-mean Gaussian vector, validated PSD.
#[derive(Debug, Clone)]
pub struct CovSpec {
    cov: Mat,
}

impl CovSpec {
    pub fn new(cov: Mat) -> Result<Self> {
        mat::require_symmetric(&cov, 1e-10, "covariance")?;
        mat::require_psd(&cov, 1e-10 * mat::frobenius(&cov).max(1.0), "covariance")?;
        Ok(Self { cov })
    }

    pub fn dim(&self) -> usize {
        self.cov.nrows()
    }

    pub fn cov(&self) -> &Mat {
        &self.cov
    }
}

/// `E[x_{i_1} x_{i_2} ... x_{i_k}]` for a zero-mean Gaussian vector: the sum
/// over all perfect pairings of the index multiset of the product of
/// covariances. Odd-size multisets give exactly zero.
pub fn isserlis_moment(cov: &CovSpec, indices: &[usize]) -> Result<f64> {
    let k = indices.len();
    if k > PAIRING_CAP {
        return Err(CoreError::UnsupportedOrder { order: k, cap: PAIRING_CAP });
    }
    for &i in indices {
        if i >= cov.dim() {
            return Err(CoreError::invalid(alloc::format!(
                "index {i} out of range for dimension {}",
                cov.dim()
            )));
        }
    }
    if k % 2 == 1 {
        return Ok(0.0);
    }
    if k == 0 {
        return Ok(1.0);
    }
    let mut used = alloc::vec![false; k];
    Ok(pair_sum(cov.cov(), indices, &mut used))
}

fn pair_sum(cov: &Mat, idx: &[usize], used: &mut Vec<bool>) -> f64 {
    let first = match used.iter().position(|&u| !u) {
        Some(f) => f,
        None => return 1.0,
    };
    used[first] = true;
    let mut total = 0.0;
    for j in (first + 1)..idx.len() {
        if used[j] {
            continue;
        }
        used[j] = true;
        total += cov[(idx[first], idx[j])] * pair_sum(cov, idx, used);
        used[j] = false;
    }
    used[first] = false;
    total
}
