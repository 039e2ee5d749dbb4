//! Deterministic linear-algebra and Gaussian-moment primitives shared by the
//! theory modules.

mod isserlis;
mod series;
mod spectral;

pub use isserlis::{isserlis_moment, CovSpec, PAIRING_CAP};
pub use series::{logdet_series, neumann_inverse};
pub use spectral::{eigendecompose, pseudoinverse, Spectrum, DEFAULT_PINV_TOL};

use crate::error::{CoreError, Result};
use crate::mat::{self, Mat};
use alloc::format;

/// Relative symmetry tolerance for kernel-type matrices.
pub const SYMMETRY_REL_TOL: f64 = 1e-12;
/// A symmetric matrix counts as PSD if its smallest eigenvalue is at least
/// `-PSD_REL_FLOOR * ||entries||_F`.
pub const PSD_REL_FLOOR: f64 = 1e-10;

/// Symmetric positive semidefinite similarity matrix with the normalizer it
/// was built with (`n_0` for inputs, `n_d` for outputs, 1 for derived
/// kernels).
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    entries: Mat,
    normalizer: usize,
}

impl GramMatrix {
    /// Validates symmetry and positive semidefiniteness.
    pub fn new(entries: Mat, normalizer: usize) -> Result<Self> {
        if normalizer == 0 {
            return Err(CoreError::invalid("gram normalizer must be positive"));
        }
        mat::require_symmetric(&entries, SYMMETRY_REL_TOL, "gram matrix")?;
        mat::require_psd(&entries, PSD_REL_FLOOR * mat::frobenius(&entries), "gram matrix")?;
        Ok(Self { entries, normalizer })
    }

    /// `entries[mu][nu] = (row_mu . row_nu) / normalizer` for a `p x n`
    /// sample matrix laid out as `p` rows of dimension `n`.
    pub fn from_samples(samples: &Mat, normalizer: usize) -> Result<Self> {
        if normalizer == 0 {
            return Err(CoreError::invalid("gram normalizer must be positive"));
        }
        if samples.nrows() == 0 {
            return Err(CoreError::invalid("need at least one sample row"));
        }
        let entries = mat::symmetrize(&((samples * samples.transpose()) / normalizer as f64));
        // Symmetric and PSD by construction.
        Ok(Self { entries, normalizer })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn normalizer(&self) -> usize {
        self.normalizer
    }

    pub fn entries(&self) -> &Mat {
        &self.entries
    }

    pub fn into_entries(self) -> Mat {
        self.entries
    }

    /// Scale by a positive constant (kernels of linear layers).
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(CoreError::invalid(format!("scale must be positive and finite, got {c}")));
        }
        Ok(Self { entries: &self.entries * c, normalizer: self.normalizer })
    }
}

/// Cross-Gram block `(rows_a . rows_b) / normalizer` between two sample sets
/// (not symmetric, so not a [`GramMatrix`]).
pub fn cross_gram(a: &Mat, b: &Mat, normalizer: usize) -> Result<Mat> {
    if normalizer == 0 {
        return Err(CoreError::invalid("gram normalizer must be positive"));
    }
    if a.ncols() != b.ncols() {
        return Err(CoreError::invalid(format!(
            "sample dimension mismatch: {} vs {}",
            a.ncols(),
            b.ncols()
        )));
    }
    Ok((a * b.transpose()) / normalizer as f64)
}
