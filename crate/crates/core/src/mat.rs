//! Small helpers on dense `f64` matrices.
//!
//! Everything in the crate works at "desk scale" (p up to a few dozen,
//! flattened CNN kernels up to a few hundred), so dense factorizations are
//! always the right tool.

use crate::error::{CoreError, Result};
use alloc::format;
use alloc::vec::Vec;
use nalgebra::DMatrix;

pub type Mat = DMatrix<f64>;

pub fn frobenius(m: &Mat) -> f64 {
    m.norm()
}

/// Largest absolute asymmetry relative to the largest entry.
pub fn asymmetry(m: &Mat) -> f64 {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst / scale
}

pub fn require_square(m: &Mat, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(CoreError::invalid(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

pub fn require_symmetric(m: &Mat, rel_tol: f64, what: &str) -> Result<()> {
    require_square(m, what)?;
    let a = asymmetry(m);
    if a > rel_tol {
        return Err(CoreError::invalid(format!(
            "{what} is not symmetric (relative asymmetry {a:.3e} > {rel_tol:.1e})"
        )));
    }
    Ok(())
}

/// Exact symmetrization `(M + M^T)/2`; used before eigensolves so that
/// round-off from matrix products cannot trip the symmetric solvers.
pub fn symmetrize(m: &Mat) -> Mat {
    0.5 * (m + m.transpose())
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &Mat) -> Vec<f64> {
    let mut ev: Vec<f64> = symmetrize(m).symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &Mat) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(0.0)
}

/// Verify `min eig >= -abs_floor` for a symmetric matrix.
pub fn require_psd(m: &Mat, abs_floor: f64, what: &str) -> Result<()> {
    let min = min_eigenvalue(m);
    if min < -abs_floor {
        return Err(CoreError::invalid(format!(
            "{what} is not positive semidefinite (min eigenvalue {min:.3e})"
        )));
    }
    Ok(())
}

/// Solve `A X = B` for symmetric positive definite `A` via Cholesky.
pub fn spd_solve(a: &Mat, b: &Mat, what: &str) -> Result<Mat> {
    let chol = symmetrize(a)
        .cholesky()
        .ok_or_else(|| CoreError::SingularMatrix(format!("{what} is not positive definite")))?;
    Ok(chol.solve(b))
}

/// Inverse of a symmetric positive definite matrix.
pub fn spd_inverse(a: &Mat, what: &str) -> Result<Mat> {
    spd_solve(a, &Mat::identity(a.nrows(), a.ncols()), what)
}

/// Solve `A X = B` for a general square `A` via partial-pivot LU.
pub fn lu_solve(a: &Mat, b: &Mat, what: &str) -> Result<Mat> {
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| CoreError::SingularMatrix(format!("{what} is singular")))
}

/// Spectral condition number of a symmetric positive semidefinite matrix.
pub fn sym_condition(m: &Mat) -> f64 {
    let ev = sym_eigenvalues(m);
    let max = ev.last().copied().unwrap_or(0.0);
    let min = ev.first().copied().unwrap_or(0.0);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Rank-revealing factor `L` (n x r) of a symmetric PSD matrix, `M = L L^T`.
///
/// Built from the eigendecomposition, so it tolerates exact rank deficiency;
/// eigenvalues below `rel_tol * max` are dropped. Used to sample Gaussians
/// with singular covariance.
pub fn psd_factor(m: &Mat, rel_tol: f64) -> Mat {
    let se = symmetrize(m).symmetric_eigen();
    let max = se.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let floor = rel_tol * max.max(f64::MIN_POSITIVE);
    let keep: Vec<usize> = (0..se.eigenvalues.len())
        .filter(|&i| se.eigenvalues[i] > floor)
        .collect();
    let n = m.nrows();
    let mut l = Mat::zeros(n, keep.len());
    for (col, &i) in keep.iter().enumerate() {
        let s = libm::sqrt(se.eigenvalues[i]);
        for row in 0..n {
            l[(row, col)] = se.eigenvectors[(row, i)] * s;
        }
    }
    l
}

/// Symmetric PSD square root `M^(1/2)`.
pub fn sym_sqrt(m: &Mat) -> Mat {
    let se = symmetrize(m).symmetric_eigen();
    let n = m.nrows();
    let mut out = Mat::zeros(n, n);
    for k in 0..n {
        let lam = se.eigenvalues[k].max(0.0);
        let s = libm::sqrt(lam);
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] += s * se.eigenvectors[(i, k)] * se.eigenvectors[(j, k)];
            }
        }
    }
    out
}

/// Kronecker product `A (x) B`.
pub fn kron(a: &Mat, b: &Mat) -> Mat {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = Mat::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let v = a[(i, j)];
            if v == 0.0 {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[(i * br + k, j * bc + l)] = v * b[(k, l)];
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psd_factor_reconstructs_rank_deficient() {
        let v = Mat::from_row_slice(3, 1, &[1.0, 2.0, -1.0]);
        let m = &v * v.transpose();
        let l = psd_factor(&m, 1e-12);
        assert_eq!(l.ncols(), 1);
        assert!(frobenius(&(&l * l.transpose() - &m)) < 1e-12);
    }

    #[test]
    fn spd_solve_matches_inverse() {
        let a = Mat::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let x = spd_solve(&a, &Mat::identity(2, 2), "a").unwrap();
        assert!(frobenius(&(&a * &x - Mat::identity(2, 2))) < 1e-12);
    }

    #[test]
    fn kron_shape_and_values() {
        let a = Mat::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        let b = Mat::identity(3, 3);
        let k = kron(&a, &b);
        assert_eq!(k.shape(), (6, 6));
        assert_eq!(k[(0, 3)], 2.0);
        assert_eq!(k[(1, 4)], 2.0);
        assert_eq!(k[(3, 0)], 0.0);
    }
}
