//! Gaussian expectations of activation products.
//!
//! Polynomial activations go through exact pairing enumeration. Everything
//! else uses a randomized low-discrepancy quadrature: `QMC_BATCHES`
//! independently shifted copies of a 2D Kronecker (R2) sequence with
//! `QMC_POINTS_PER_BATCH` points each, mapped through the inverse normal
//! CDF. The batch spread gives the standard-error estimate.

use crate::error::Result;
use crate::gpkernels::ActivationSpec;
use crate::mat::Mat;
use crate::mathcore::{isserlis_moment, CovSpec};
use crate::rng::stream_rng;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

pub const QMC_BATCHES: usize = 16;
pub const QMC_POINTS_PER_BATCH: usize = 1 << 14;
const QMC_SEED: u64 = 0x7fb5_d329_728e_a185;

// Plastic-constant increments of the 2D R2 sequence.
const R2_ALPHA_1: f64 = 0.754_877_666_246_692_8;
const R2_ALPHA_2: f64 = 0.569_840_290_998_053_2;

#[derive(Debug, Clone, Copy)]
pub struct PairExpectation {
    pub value: f64,
    /// Standard error of `value`; exactly zero on analytic paths.
    pub se: f64,
}

/// `E[f(x) g(y)]` for `(x, y)` zero-mean Gaussian with covariance
/// `[[c11, c12], [c12, c22]]`.
pub fn pair_expectation(
    c11: f64,
    c12: f64,
    c22: f64,
    f: &ActivationSpec,
    g: &ActivationSpec,
) -> Result<PairExpectation> {
    if let (Some(ca), Some(cb)) = (f.as_polynomial(), g.as_polynomial()) {
        let value = pair_expectation_poly(c11, c12, c22, &ca, &cb)?;
        return Ok(PairExpectation { value, se: 0.0 });
    }
    Ok(pair_expectation_qmc(c11, c12, c22, f, g))
}

fn pair_expectation_poly(
    c11: f64,
    c12: f64,
    c22: f64,
    ca: &[f64],
    cb: &[f64],
) -> Result<f64> {
    // Clamp tiny negative round-off in the 2x2 determinant before validation.
    let c12 = if c11 * c22 > 0.0 {
        let bound = libm::sqrt(c11 * c22);
        c12.clamp(-bound, bound)
    } else {
        0.0
    };
    let cov = CovSpec::new(Mat::from_row_slice(2, 2, &[c11, c12, c12, c22]))?;
    let mut total = 0.0;
    for (i, &ai) in ca.iter().enumerate() {
        if ai == 0.0 {
            continue;
        }
        for (j, &bj) in cb.iter().enumerate() {
            if bj == 0.0 {
                continue;
            }
            let mut idx = vec![0usize; i];
            idx.extend(core::iter::repeat_n(1usize, j));
            total += ai * bj * isserlis_moment(&cov, &idx)?;
        }
    }
    Ok(total)
}

fn pair_expectation_qmc(
    c11: f64,
    c12: f64,
    c22: f64,
    f: &ActivationSpec,
    g: &ActivationSpec,
) -> PairExpectation {
    // Cholesky factor of the 2x2 covariance, tolerant of rank deficiency.
    let l11 = libm::sqrt(c11.max(0.0));
    let l21 = if l11 > 0.0 { c12 / l11 } else { 0.0 };
    let l22 = libm::sqrt((c22 - l21 * l21).max(0.0));

    let mut batch_means = [0.0f64; QMC_BATCHES];
    for (b, mean) in batch_means.iter_mut().enumerate() {
        let mut rng = stream_rng(QMC_SEED, b as u64);
        let shift_u: f64 = rng.random();
        let shift_v: f64 = rng.random();
        let mut acc = 0.0;
        let mut u = shift_u;
        let mut v = shift_v;
        for _ in 0..QMC_POINTS_PER_BATCH {
            u += R2_ALPHA_1;
            if u >= 1.0 {
                u -= 1.0;
            }
            v += R2_ALPHA_2;
            if v >= 1.0 {
                v -= 1.0;
            }
            let z1 = norm_inv_cdf(u);
            let z2 = norm_inv_cdf(v);
            let x = l11 * z1;
            let y = l21 * z1 + l22 * z2;
            acc += f.apply(x) * g.apply(y);
        }
        *mean = acc / QMC_POINTS_PER_BATCH as f64;
    }
    let value = batch_means.iter().sum::<f64>() / QMC_BATCHES as f64;
    let var = batch_means.iter().map(|m| (m - value) * (m - value)).sum::<f64>()
        / (QMC_BATCHES as f64 - 1.0);
    PairExpectation { value, se: libm::sqrt(var / QMC_BATCHES as f64) }
}

/// `E[phi(sd * z)^k]` for standard normal `z`.
///
/// Polynomials and relu have closed forms; other activations use
/// Gauss–Hermite quadrature (64 nodes), which is effectively exact for
/// smooth activations such as erf.
pub fn univariate_moment(act: &ActivationSpec, sd: f64, k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    match act {
        ActivationSpec::Relu => {
            // E[relu(s z)^k] = s^k E[|z|^k] / 2.
            0.5 * libm::pow(sd, k as f64) * abs_normal_moment(k)
        }
        _ => {
            if let Some(coeffs) = act.as_polynomial() {
                // phi(sd z)^k is a polynomial in z; take E term by term.
                let scaled: Vec<f64> = coeffs
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| c * libm::pow(sd, i as f64))
                    .collect();
                let mut pk = vec![1.0];
                for _ in 0..k {
                    pk = poly_mul(&pk, &scaled);
                }
                pk.iter()
                    .enumerate()
                    .map(|(m, &c)| c * standard_normal_moment(m))
                    .sum()
            } else {
                let (nodes, weights) = gauss_hermite(64);
                let inv_sqrt_pi = 1.0 / libm::sqrt(core::f64::consts::PI);
                let mut total = 0.0;
                for (x, w) in nodes.iter().zip(weights.iter()) {
                    let z = core::f64::consts::SQRT_2 * x;
                    total += w * libm::pow(act.apply(sd * z), k as f64);
                }
                total * inv_sqrt_pi
            }
        }
    }
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            out[i + j] += ai * bj;
        }
    }
    out
}

/// `E[z^m]` for standard normal `z`: `(m-1)!!` for even `m`, zero otherwise.
fn standard_normal_moment(m: usize) -> f64 {
    if m % 2 == 1 {
        return 0.0;
    }
    let mut acc = 1.0;
    let mut k = m as i64 - 1;
    while k > 1 {
        acc *= k as f64;
        k -= 2;
    }
    acc
}

/// `E[|z|^k]` for standard normal `z`.
fn abs_normal_moment(k: usize) -> f64 {
    if k.is_multiple_of(2) {
        standard_normal_moment(k)
    } else {
        // sqrt(2/pi) * 2^((k-1)/2) * ((k-1)/2)!
        let half = (k - 1) / 2;
        let mut fact = 1.0;
        for i in 1..=half {
            fact *= i as f64;
        }
        libm::sqrt(2.0 / core::f64::consts::PI) * libm::pow(2.0, half as f64) * fact
    }
}

/// Gauss–Hermite nodes and weights (physicists' convention, weight
/// `exp(-x^2)`), via Golub–Welsch on the Jacobi matrix.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = Mat::zeros(n, n);
    for k in 1..n {
        let b = libm::sqrt(k as f64 / 2.0);
        j[(k - 1, k)] = b;
        j[(k, k - 1)] = b;
    }
    let se = j.symmetric_eigen();
    let sqrt_pi = libm::sqrt(core::f64::consts::PI);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = se.eigenvectors[(0, i)];
            (se.eigenvalues[i], sqrt_pi * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    (pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1).collect())
}

/// Inverse standard normal CDF (Acklam's rational approximation plus one
/// Halley refinement against the erfc-based CDF; relative error near 1e-15
/// away from the extreme tails).
pub fn norm_inv_cdf(p: f64) -> f64 {
    const P_LOW: f64 = 0.02425;
    let p = p.clamp(1e-300, 1.0 - 1e-16);

    let x = if p < P_LOW {
        let q = libm::sqrt(-2.0 * libm::log(p));
        (((((-7.784894002430293e-03 * q - 3.223964580411365e-01) * q - 2.400758277161838e+00)
            * q
            - 2.549732539343734e+00)
            * q
            + 4.374664141464968e+00)
            * q
            + 2.938163982698783e+00)
            / ((((7.784695709041462e-03 * q + 3.224671290700398e-01) * q
                + 2.445134137142996e+00)
                * q
                + 3.754408661907416e+00)
                * q
                + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((-3.969683028665376e+01 * r + 2.209460984245205e+02) * r - 2.759285104469687e+02)
            * r
            + 1.383_577_518_672_69e2)
            * r
            - 3.066479806614716e+01)
            * r
            + 2.506628277459239e+00)
            * q
            / (((((-5.447609879822406e+01 * r + 1.615858368580409e+02) * r
                - 1.556989798598866e+02)
                * r
                + 6.680131188771972e+01)
                * r
                - 1.328068155288572e+01)
                * r
                + 1.0)
    } else {
        let q = libm::sqrt(-2.0 * libm::log(1.0 - p));
        -(((((-7.784894002430293e-03 * q - 3.223964580411365e-01) * q - 2.400758277161838e+00)
            * q
            - 2.549732539343734e+00)
            * q
            + 4.374664141464968e+00)
            * q
            + 2.938163982698783e+00)
            / ((((7.784695709041462e-03 * q + 3.224671290700398e-01) * q
                + 2.445134137142996e+00)
                * q
                + 3.754408661907416e+00)
                * q
                + 1.0)
    };

    // One Halley step: u = (Phi(x) - p) / phi(x).
    let e = 0.5 * libm::erfc(-x / core::f64::consts::SQRT_2) - p;
    let pdf = libm::exp(-0.5 * x * x) / libm::sqrt(2.0 * core::f64::consts::PI);
    let u = e / pdf;
    x - u / (1.0 + 0.5 * x * u)
}
