//! Eigendecomposition and Moore–Penrose pseudoinverse.

use crate::error::{CoreError, Result};
use crate::mat::{self, Mat};
use alloc::vec::Vec;

/// Singular values below `DEFAULT_PINV_TOL * sigma_max` are treated as zero.
pub const DEFAULT_PINV_TOL: f64 = 1e-10;

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted
/// nonincreasing and orthonormal eigenvector columns.
#[derive(Debug, Clone)]
pub struct Spectrum {
    eigenvalues: Vec<f64>,
    eigenvectors: Mat,
}

impl Spectrum {
    /// Nonincreasing.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Column `k` is the eigenvector for `eigenvalues()[k]`.
    pub fn eigenvectors(&self) -> &Mat {
        &self.eigenvectors
    }

    /// `U diag(lambda) U^T`.
    pub fn reconstruct(&self) -> Mat {
        let d = Mat::from_diagonal(&nalgebra::DVector::from_row_slice(&self.eigenvalues));
        &self.eigenvectors * d * self.eigenvectors.transpose()
    }
}

/// Eigendecompose a symmetric matrix. Non-symmetric input (relative
/// asymmetry above 1e-10) is rejected.
pub fn eigendecompose(m: &Mat) -> Result<Spectrum> {
    mat::require_symmetric(m, 1e-10, "eigendecompose input")?;
    let se = mat::symmetrize(m).symmetric_eigen();
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| se.eigenvalues[b].partial_cmp(&se.eigenvalues[a]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| se.eigenvalues[i]).collect();
    let mut eigenvectors = Mat::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        eigenvectors.set_column(col, &se.eigenvectors.column(i));
    }
    Ok(Spectrum { eigenvalues, eigenvectors })
}

/// Moore–Penrose pseudoinverse with relative rank cutoff: singular values
/// below `tol * sigma_max` are treated as zero.
pub fn pseudoinverse(m: &Mat, tol: f64) -> Result<Mat> {
    if !(tol > 0.0) {
        return Err(CoreError::invalid("pseudoinverse tolerance must be positive"));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::invalid("pseudoinverse input has non-finite entries"));
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd with u");
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let cutoff = tol * smax;
    let r = svd.singular_values.len();
    let mut inv_s = Mat::zeros(r, r);
    for i in 0..r {
        let s = svd.singular_values[i];
        if s > cutoff {
            inv_s[(i, i)] = 1.0 / s;
        }
    }
    Ok(v_t.transpose() * inv_s * u.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_matrix_spectrum() {
        let m = Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0]);
        let s = eigendecompose(&m).unwrap();
        assert_eq!(s.eigenvalues(), &[3.0, 1.0]);
        assert!(mat::frobenius(&(s.reconstruct() - m)) < 1e-12);
    }

    #[test]
    fn zero_matrix_pseudoinverse_is_zero() {
        let z = Mat::zeros(3, 2);
        let p = pseudoinverse(&z, DEFAULT_PINV_TOL).unwrap();
        assert_eq!(p.shape(), (2, 3));
        assert_eq!(mat::frobenius(&p), 0.0);
    }

    #[test]
    fn rejects_asymmetric_input() {
        let m = Mat::from_row_slice(2, 2, &[1.0, 0.5, 0.1, 1.0]);
        assert!(eigendecompose(&m).is_err());
    }
}
