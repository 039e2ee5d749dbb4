//! Truncated operator series around an invertible base point.

use crate::error::{CoreError, Result};
use crate::mat::{self, Mat};

/// Truncated Neumann series for `(G + t B)^{-1}`:
/// `sum_{k=0..order} (-t G^{-1} B)^k G^{-1}`, truncation error `O(t^{order+1})`.
///
/// Fails with [`CoreError::DivergentSeries`] when the spectral radius of
/// `t G^{-1} B` is 1 or larger.
pub fn neumann_inverse(base: &Mat, perturbation: &Mat, t: f64, order: usize) -> Result<Mat> {
    mat::require_square(base, "series base")?;
    if perturbation.shape() != base.shape() {
        return Err(CoreError::invalid("perturbation shape must match base"));
    }
    let g_inv = mat::lu_solve(base, &Mat::identity(base.nrows(), base.ncols()), "series base")?;
    let step = -t * (&g_inv * perturbation);
    let radius = spectral_radius(&step);
    if radius >= 1.0 {
        return Err(CoreError::DivergentSeries { radius });
    }
    let mut term = g_inv.clone();
    let mut sum = g_inv;
    for _ in 0..order {
        term = &step * term;
        sum += &term;
    }
    Ok(sum)
}

/// Truncated Maclaurin series of `log det(I + t A)`:
/// `sum_{k=1..order} (-1)^(k+1) tr(A^k) t^k / k`.
pub fn logdet_series(a: &Mat, t: f64, order: usize) -> Result<f64> {
    mat::require_square(a, "log-det series matrix")?;
    let mut power = Mat::identity(a.nrows(), a.ncols());
    let mut tk = 1.0;
    let mut total = 0.0;
    for k in 1..=order {
        power = &power * a;
        tk *= t;
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        total += sign * power.trace() * tk / k as f64;
    }
    Ok(total)
}

fn spectral_radius(m: &Mat) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| libm::hypot(z.re, z.im))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_t_returns_exact_inverse() {
        let g = Mat::from_row_slice(2, 2, &[3.0, 1.0, 0.5, 2.0]);
        let b = Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let got = neumann_inverse(&g, &b, 0.0, 0).unwrap();
        let want = g.clone().try_inverse().unwrap();
        assert!(mat::frobenius(&(got - want)) < 1e-14);
    }

    #[test]
    fn scalar_geometric_series() {
        let g = Mat::identity(3, 3);
        let b = Mat::identity(3, 3);
        let got = neumann_inverse(&g, &b, 0.1, 2).unwrap();
        let want = (1.0 - 0.1 + 0.01) * Mat::identity(3, 3);
        assert!(mat::frobenius(&(got - want)) < 1e-14);
    }

    #[test]
    fn divergence_is_flagged() {
        let g = Mat::identity(2, 2);
        let b = Mat::identity(2, 2);
        assert!(matches!(
            neumann_inverse(&g, &b, 1.5, 3),
            Err(CoreError::DivergentSeries { .. })
        ));
    }

    #[test]
    fn logdet_trivial_cases() {
        let a = Mat::identity(2, 2);
        assert_eq!(logdet_series(&a, 0.0, 5).unwrap(), 0.0);
        let first = logdet_series(&a, 0.1, 1).unwrap();
        assert!((first - 0.2).abs() < 1e-15);
    }
}
