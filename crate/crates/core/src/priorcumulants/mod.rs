//! Leading-order prior covariances of hidden-layer kernels — the
//! `cov_W(K^(l), K^(d-1))` inputs to the posterior correction — plus the
//! exactly solved finite-width second moments for linear MLPs and a
//! Monte-Carlo ground-truth oracle.

mod conv_cov;
mod oracle;

pub use conv_cov::CnnKernelCovariance;
pub use oracle::{
    prior_cumulant_oracle, KernelCovarianceStats, PriorKernelStats, PriorOracleOptions,
};

use crate::error::{CoreError, Result};
use crate::gpkernels::{
    mlp_linear_gp, single_layer_gp, univariate_moment, ActivationSpec,
    WidthProfile,
};
use crate::mat::{self, Mat};
use crate::mathcore::{isserlis_moment, CovSpec, GramMatrix};
use crate::rng::stream_rng;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use rand_distr::StandardNormal;

/// Four-index covariance tensor over sample pairs, stored as its
/// `p^2 x p^2` flattening with row index `mu*p + nu`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovTensor {
    p: usize,
    m: Mat,
}

impl CovTensor {
    pub fn from_flat(m: Mat, p: usize) -> Result<Self> {
        if m.nrows() != p * p || m.ncols() != p * p {
            return Err(CoreError::invalid(format!(
                "covariance tensor flattening must be {n}x{n}, got {}x{}",
                m.nrows(),
                m.ncols(),
                n = p * p
            )));
        }
        Ok(Self { p, m })
    }

    pub fn zeros(p: usize) -> Self {
        Self { p, m: Mat::zeros(p * p, p * p) }
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn flat(&self) -> &Mat {
        &self.m
    }

    pub fn get(&self, mu: usize, nu: usize, rho: usize, lambda: usize) -> f64 {
        self.m[(mu * self.p + nu, rho * self.p + lambda)]
    }

    pub fn set(&mut self, mu: usize, nu: usize, rho: usize, lambda: usize, v: f64) {
        self.m[(mu * self.p + nu, rho * self.p + lambda)] = v;
    }

    /// `out[mu nu] = sum_{rho lambda} weights[rho lambda] * T[(mu nu),(rho lambda)]`.
    pub fn contract(&self, weights: &Mat) -> Result<Mat> {
        let p = self.p;
        if weights.shape() != (p, p) {
            return Err(CoreError::invalid("contraction weights must be p x p"));
        }
        let mut out = Mat::zeros(p, p);
        for mu in 0..p {
            for nu in 0..p {
                let mut acc = 0.0;
                for rho in 0..p {
                    for lambda in 0..p {
                        acc += weights[(rho, lambda)] * self.get(mu, nu, rho, lambda);
                    }
                }
                out[(mu, nu)] = acc;
            }
        }
        Ok(out)
    }

    pub fn scale(&mut self, c: f64) {
        self.m *= c;
    }

    pub fn frobenius(&self) -> f64 {
        mat::frobenius(&self.m)
    }
}

/// Covariance tensor with entrywise standard errors (zero on exact paths).
#[derive(Debug, Clone)]
pub struct CovTensorWithSe {
    pub tensor: CovTensor,
    pub se: CovTensor,
}

/// Leading prior covariance
/// `cov_W(K^(l)_{mu nu}, K^(l+tau)_{rho lambda})` of a deep linear MLP:
/// `sigma_{l+1}^2 ... sigma_{l+tau}^2 * (sum_{l'<=l} 1/n_{l'}) *
/// (Kinf_{mu rho} Kinf_{nu lambda} + Kinf_{mu lambda} Kinf_{nu rho})`
/// with `Kinf = m_l^2 G_xx`; exactly linear in the inverse-width sum.
pub fn mlp_kernel_covariance(
    gxx: &GramMatrix,
    profile: &WidthProfile,
    layer: usize,
    lag: usize,
) -> Result<CovTensor> {
    check_layer_lag(profile, layer, lag)?;
    let k_inf = mlp_linear_gp(gxx, profile, layer)?;
    let pref = profile.sigma_sq_product(layer + 1, layer + lag);
    let ws = profile.inverse_width_sum(layer)?;
    Ok(wick_pair_tensor(k_inf.entries(), pref * ws))
}

/// Exact finite-width covariance `cov_W(K^(l), K^(l+tau))` of a deep linear
/// MLP, from the exactly solvable second-moment recursion
/// `E[K^(l) x K^(l)] = sigma_l^4 (E[K x K]^(l-1) + (1/n_l) * Wick-exchange terms)`.
///
/// Differs from [`mlp_kernel_covariance`] by `O(n^-2)`; used as the
/// deterministic reference for the residual-scaling checks.
pub fn mlp_kernel_covariance_exact(
    gxx: &GramMatrix,
    profile: &WidthProfile,
    layer: usize,
    lag: usize,
) -> Result<CovTensor> {
    check_layer_lag(profile, layer, lag)?;
    let p = gxx.dim();
    let g = gxx.entries();
    // second[(mu nu),(rho lambda)] = E[K_{mu nu} K_{rho lambda}], layer 0.
    let mut second = CovTensor::from_flat(outer_pair(g, g), p)?;
    for l in 1..=layer {
        let s4 = profile.sigma_sq(l) * profile.sigma_sq(l);
        let inv_n = 1.0 / profile.width(l) as f64;
        let mut next = CovTensor::zeros(p);
        for mu in 0..p {
            for nu in 0..p {
                for rho in 0..p {
                    for lambda in 0..p {
                        let direct = second.get(mu, nu, rho, lambda);
                        let exch =
                            second.get(mu, rho, nu, lambda) + second.get(mu, lambda, nu, rho);
                        next.set(mu, nu, rho, lambda, s4 * (direct + inv_n * exch));
                    }
                }
            }
        }
        second = next;
    }
    let pref = profile.sigma_sq_product(layer + 1, layer + lag);
    let k_inf = mlp_linear_gp(gxx, profile, layer)?;
    let mean_outer = outer_pair(k_inf.entries(), k_inf.entries());
    let cov = pref * (second.flat() - mean_outer);
    CovTensor::from_flat(cov, p)
}

fn check_layer_lag(profile: &WidthProfile, layer: usize, lag: usize) -> Result<()> {
    if layer == 0 || layer + lag > profile.depth() - 1 {
        return Err(CoreError::invalid(format!(
            "need 1 <= layer and layer+lag <= {}, got layer {layer}, lag {lag}",
            profile.depth() - 1
        )));
    }
    Ok(())
}

/// `T[(mu nu),(rho lambda)] = scale * (A_{mu rho} A_{nu lambda} + A_{mu lambda} A_{nu rho})`.
fn wick_pair_tensor(a: &Mat, scale: f64) -> CovTensor {
    let p = a.nrows();
    let mut t = CovTensor::zeros(p);
    for mu in 0..p {
        for nu in 0..p {
            for rho in 0..p {
                for lambda in 0..p {
                    t.set(
                        mu,
                        nu,
                        rho,
                        lambda,
                        scale * (a[(mu, rho)] * a[(nu, lambda)] + a[(mu, lambda)] * a[(nu, rho)]),
                    );
                }
            }
        }
    }
    t
}

/// `out[(mu nu),(rho lambda)] = A_{mu nu} B_{rho lambda}`.
fn outer_pair(a: &Mat, b: &Mat) -> Mat {
    let p = a.nrows();
    let mut out = Mat::zeros(p * p, p * p);
    for mu in 0..p {
        for nu in 0..p {
            for rho in 0..p {
                for lambda in 0..p {
                    out[(mu * p + nu, rho * p + lambda)] = a[(mu, nu)] * b[(rho, lambda)];
                }
            }
        }
    }
    out
}

const FOURPOINT_MC_SEED: u64 = 0x1c43_88f1_02ab_9e04;
const FOURPOINT_MC_DRAWS: usize = 1 << 21;
const FOURPOINT_MC_BATCHES: usize = 16;

/// Scaled single-hidden-layer kernel covariance
/// `n_1 cov_W(K_{mu nu}, K_{rho lambda}) = E[phi phi phi phi] - Kinf Kinf`.
///
/// Polynomial activations are evaluated exactly by pairing enumeration (the
/// four-point needs moments up to 4*degree, so degree 3 is the cap on this
/// path). Diagonal `G_xx` takes the factorized fast path, exact for any
/// activation with computable univariate moments. Everything else falls back
/// to fixed-seed Monte Carlo with standard errors.
pub fn nonlinear_fourpoint_cov(
    gxx: &GramMatrix,
    sigma1_sq: f64,
    act: &ActivationSpec,
) -> Result<CovTensorWithSe> {
    nonlinear_fourpoint_cov_seeded(gxx, sigma1_sq, act, FOURPOINT_MC_SEED, FOURPOINT_MC_DRAWS)
}

/// [`nonlinear_fourpoint_cov`] with explicit Monte-Carlo seed and draw count
/// (ignored on exact paths).
pub fn nonlinear_fourpoint_cov_seeded(
    gxx: &GramMatrix,
    sigma1_sq: f64,
    act: &ActivationSpec,
    seed: u64,
    draws: usize,
) -> Result<CovTensorWithSe> {
    if !(sigma1_sq > 0.0) {
        return Err(CoreError::invalid("sigma1_sq must be positive"));
    }
    let p = gxx.dim();
    if is_diagonal(gxx.entries()) {
        return fourpoint_diagonal(gxx, sigma1_sq, act);
    }
    if let Some(coeffs) = act.as_polynomial() {
        let degree = coeffs.len().saturating_sub(1);
        if 4 * degree > crate::mathcore::PAIRING_CAP {
            return Err(CoreError::UnsupportedOrder {
                order: 4 * degree,
                cap: crate::mathcore::PAIRING_CAP,
            });
        }
        return fourpoint_polynomial(gxx, sigma1_sq, &coeffs);
    }
    fourpoint_mc(gxx, sigma1_sq, act, seed, draws, p)
}

fn is_diagonal(g: &Mat) -> bool {
    let max_diag = (0..g.nrows()).map(|i| g[(i, i)].abs()).fold(0.0f64, f64::max);
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            if i != j && g[(i, j)].abs() > 1e-12 * max_diag.max(1.0) {
                return false;
            }
        }
    }
    true
}

/// Diagonal `G_xx`: samples are independent, so every four-point expectation
/// factorizes into univariate moments of `phi` per sample index.
fn fourpoint_diagonal(
    gxx: &GramMatrix,
    sigma1_sq: f64,
    act: &ActivationSpec,
) -> Result<CovTensorWithSe> {
    let p = gxx.dim();
    let sd: Vec<f64> = (0..p)
        .map(|mu| libm::sqrt(sigma1_sq * gxx.entries()[(mu, mu)]))
        .collect();
    // moments[mu][k] = E[phi(h_mu)^k], k = 0..4
    let moments: Vec<[f64; 5]> = sd
        .iter()
        .map(|&s| {
            let mut m = [0.0; 5];
            for (k, slot) in m.iter_mut().enumerate() {
                *slot = univariate_moment(act, s, k);
            }
            m
        })
        .collect();
    let e2 = |mu: usize, nu: usize| {
        if mu == nu {
            moments[mu][2]
        } else {
            moments[mu][1] * moments[nu][1]
        }
    };
    let mut t = CovTensor::zeros(p);
    let mut counts = [0usize; 4];
    for mu in 0..p {
        for nu in 0..p {
            for rho in 0..p {
                for lambda in 0..p {
                    // E[phi_mu phi_nu phi_rho phi_lambda] as a product over
                    // distinct sample indices of E[phi^multiplicity].
                    counts.fill(0);
                    let mut distinct: [usize; 4] = [0; 4];
                    let mut n_distinct = 0;
                    for &idx in &[mu, nu, rho, lambda] {
                        match distinct[..n_distinct].iter().position(|&d| d == idx) {
                            Some(pos) => counts[pos] += 1,
                            None => {
                                distinct[n_distinct] = idx;
                                counts[n_distinct] = 1;
                                n_distinct += 1;
                            }
                        }
                    }
                    let mut e4 = 1.0;
                    for slot in 0..n_distinct {
                        e4 *= moments[distinct[slot]][counts[slot]];
                    }
                    t.set(mu, nu, rho, lambda, e4 - e2(mu, nu) * e2(rho, lambda));
                }
            }
        }
    }
    Ok(CovTensorWithSe { se: CovTensor::zeros(p), tensor: t })
}

fn fourpoint_polynomial(
    gxx: &GramMatrix,
    sigma1_sq: f64,
    coeffs: &[f64],
) -> Result<CovTensorWithSe> {
    let p = gxx.dim();
    let cov = CovSpec::new(sigma1_sq * gxx.entries())?;
    let mut e2 = Mat::zeros(p, p);
    for mu in 0..p {
        for nu in mu..p {
            let v = poly_pair_moment(&cov, coeffs, &[mu, nu])?;
            e2[(mu, nu)] = v;
            e2[(nu, mu)] = v;
        }
    }
    let mut t = CovTensor::zeros(p);
    for mu in 0..p {
        for nu in 0..p {
            for rho in 0..p {
                for lambda in 0..p {
                    let e4 = poly_quad_moment(&cov, coeffs, mu, nu, rho, lambda)?;
                    t.set(mu, nu, rho, lambda, e4 - e2[(mu, nu)] * e2[(rho, lambda)]);
                }
            }
        }
    }
    Ok(CovTensorWithSe { se: CovTensor::zeros(p), tensor: t })
}

fn poly_pair_moment(cov: &CovSpec, coeffs: &[f64], who: &[usize; 2]) -> Result<f64> {
    let mut total = 0.0;
    for (i, &ai) in coeffs.iter().enumerate() {
        if ai == 0.0 {
            continue;
        }
        for (j, &bj) in coeffs.iter().enumerate() {
            if bj == 0.0 {
                continue;
            }
            let mut idx = vec![who[0]; i];
            idx.extend(core::iter::repeat_n(who[1], j));
            total += ai * bj * isserlis_moment(cov, &idx)?;
        }
    }
    Ok(total)
}

fn poly_quad_moment(
    cov: &CovSpec,
    coeffs: &[f64],
    mu: usize,
    nu: usize,
    rho: usize,
    lambda: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for (i, &ci) in coeffs.iter().enumerate() {
        if ci == 0.0 {
            continue;
        }
        for (j, &cj) in coeffs.iter().enumerate() {
            if cj == 0.0 {
                continue;
            }
            for (k, &ck) in coeffs.iter().enumerate() {
                if ck == 0.0 {
                    continue;
                }
                for (l, &cl) in coeffs.iter().enumerate() {
                    if cl == 0.0 {
                        continue;
                    }
                    let mut idx = vec![mu; i];
                    idx.extend(core::iter::repeat_n(nu, j));
                    idx.extend(core::iter::repeat_n(rho, k));
                    idx.extend(core::iter::repeat_n(lambda, l));
                    total += ci * cj * ck * cl * isserlis_moment(cov, &idx)?;
                }
            }
        }
    }
    Ok(total)
}

fn fourpoint_mc(
    gxx: &GramMatrix,
    sigma1_sq: f64,
    act: &ActivationSpec,
    seed: u64,
    draws: usize,
    p: usize,
) -> Result<CovTensorWithSe> {
    let factor = mat::psd_factor(&(sigma1_sq * gxx.entries()), 1e-12);
    let r = factor.ncols();
    let batches = FOURPOINT_MC_BATCHES;
    let per_batch = (draws / batches).max(1);
    let mut batch_tensors: Vec<Mat> = Vec::with_capacity(batches);
    let mut phi = vec![0.0f64; p];
    let mut z = vec![0.0f64; r];
    for b in 0..batches {
        let mut rng = stream_rng(seed, b as u64);
        let mut e4 = Mat::zeros(p * p, p * p);
        let mut e2 = Mat::zeros(p, p);
        for _ in 0..per_batch {
            for zi in z.iter_mut() {
                *zi = rng.sample(StandardNormal);
            }
            for mu in 0..p {
                let mut h = 0.0;
                for k in 0..r {
                    h += factor[(mu, k)] * z[k];
                }
                phi[mu] = act.apply(h);
            }
            for mu in 0..p {
                for nu in 0..p {
                    let pm = phi[mu] * phi[nu];
                    e2[(mu, nu)] += pm;
                    for rho in 0..p {
                        for lambda in 0..p {
                            e4[(mu * p + nu, rho * p + lambda)] += pm * phi[rho] * phi[lambda];
                        }
                    }
                }
            }
        }
        e4 /= per_batch as f64;
        e2 /= per_batch as f64;
        batch_tensors.push(e4 - outer_pair(&e2, &e2));
    }
    let mean = batch_tensors.iter().fold(Mat::zeros(p * p, p * p), |acc, t| acc + t)
        / batches as f64;
    let mut var = Mat::zeros(p * p, p * p);
    for t in &batch_tensors {
        let d = t - &mean;
        var += d.component_mul(&d);
    }
    var /= (batches - 1) as f64 * batches as f64;
    let se = var.map(libm::sqrt);
    Ok(CovTensorWithSe {
        tensor: CovTensor::from_flat(mean, p)?,
        se: CovTensor::from_flat(se, p)?,
    })
}

/// Exact single-hidden-layer GP kernel used alongside the four-point tensor;
/// thin wrapper so callers get matching conventions.
pub fn single_layer_gp_kernel(
    gxx: &GramMatrix,
    sigma1_sq: f64,
    act: &ActivationSpec,
) -> Result<GramMatrix> {
    Ok(single_layer_gp(gxx, sigma1_sq, act)?.kernel)
}

/// Third joint cumulant of the hidden-layer kernel entries of a depth-2
/// linear network (the kernel is an empirical covariance of i.i.d. Gaussian
/// feature columns, so the cumulant is the 8-term connected pairing sum,
/// scaled by `1/n_1^2`).
#[derive(Debug, Clone)]
pub struct ThirdCumulant {
    p: usize,
    data: Vec<f64>,
}

impl ThirdCumulant {
    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn get(&self, i: (usize, usize), j: (usize, usize), k: (usize, usize)) -> f64 {
        let p = self.p;
        let a = i.0 * p + i.1;
        let b = j.0 * p + j.1;
        let c = k.0 * p + k.1;
        self.data[(a * p * p + b) * p * p + c]
    }
}

/// `kappa_3(K_{mu nu}, K_{rho lambda}, K_{a b})` for the depth-2 linear
/// hidden-layer kernel with feature covariance `C = sigma1_sq * G_xx`.
pub fn linear_two_layer_third_cumulant(
    gxx: &GramMatrix,
    sigma1_sq: f64,
    n1: usize,
) -> Result<ThirdCumulant> {
    if n1 == 0 {
        return Err(CoreError::invalid("width must be positive"));
    }
    let p = gxx.dim();
    let c = sigma1_sq * gxx.entries();
    let scale = 1.0 / (n1 as f64 * n1 as f64);
    let mut data = vec![0.0f64; p.pow(6)];
    for mu in 0..p {
        for nu in 0..p {
            for rho in 0..p {
                for lambda in 0..p {
                    for a in 0..p {
                        for b in 0..p {
                            let v = c[(mu, rho)] * (c[(lambda, a)] * c[(b, nu)] + c[(lambda, b)] * c[(a, nu)])
                                + c[(mu, lambda)] * (c[(rho, a)] * c[(b, nu)] + c[(rho, b)] * c[(a, nu)])
                                + c[(mu, a)] * (c[(b, rho)] * c[(lambda, nu)] + c[(b, lambda)] * c[(rho, nu)])
                                + c[(mu, b)] * (c[(a, rho)] * c[(lambda, nu)] + c[(a, lambda)] * c[(rho, nu)]);
                            let idx = ((mu * p + nu) * p * p + (rho * p + lambda)) * p * p
                                + (a * p + b);
                            data[idx] = scale * v;
                        }
                    }
                }
            }
        }
    }
    Ok(ThirdCumulant { p, data })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_gram(p: usize) -> GramMatrix {
        GramMatrix::new(Mat::identity(p, p), 1).unwrap()
    }

    #[test]
    fn single_sample_wick_count() {
        // p = 1, l = 1, tau = 0: cov(K, K) = (2/n1) sigma1^4 Gxx^2.
        let g = GramMatrix::new(Mat::from_row_slice(1, 1, &[0.7]), 1).unwrap();
        let profile = WidthProfile::new(vec![50, 10], 3, vec![1.3, 1.0, 1.0]).unwrap();
        let t = mlp_kernel_covariance(&g, &profile, 1, 0).unwrap();
        let want = 2.0 / 50.0 * 1.3 * 1.3 * 0.7 * 0.7;
        assert!((t.get(0, 0, 0, 0) - want).abs() < 1e-15);
    }

    #[test]
    fn covariance_is_exactly_linear_in_inverse_widths() {
        let g = unit_gram(3);
        let p1 = WidthProfile::new(vec![7, 13], 2, vec![1.1, 0.9, 1.0]).unwrap();
        let p2 = WidthProfile::new(vec![14, 26], 2, vec![1.1, 0.9, 1.0]).unwrap();
        let a = mlp_kernel_covariance(&g, &p1, 2, 0).unwrap();
        let b = mlp_kernel_covariance(&g, &p2, 2, 0).unwrap();
        assert_eq!(a.flat() * 0.5, b.flat().clone());
    }

    #[test]
    fn exact_second_moment_reduces_to_leading_at_large_width() {
        let g = GramMatrix::new(
            Mat::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 0.8]),
            1,
        )
        .unwrap();
        let profile = WidthProfile::new(vec![1000, 1000], 2, vec![1.2, 0.8, 1.0]).unwrap();
        let lead = mlp_kernel_covariance(&g, &profile, 2, 0).unwrap();
        let exact = mlp_kernel_covariance_exact(&g, &profile, 2, 0).unwrap();
        let diff = exact.flat() - lead.flat();
        // Residual is O(n^-2): down by ~1/(2n) relative to the leading term.
        assert!(mat::frobenius(&diff) < 2e-3 * lead.frobenius());
        assert!(mat::frobenius(&diff) > 1e-5 * lead.frobenius());
    }

    #[test]
    fn exact_residual_quarters_when_widths_double() {
        let g = GramMatrix::new(
            Mat::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.1]),
            1,
        )
        .unwrap();
        let mut norms = Vec::new();
        for n in [400usize, 800] {
            let profile = WidthProfile::new(vec![n, n], 2, vec![1.0, 1.0, 1.0]).unwrap();
            let lead = mlp_kernel_covariance(&g, &profile, 2, 0).unwrap();
            let exact = mlp_kernel_covariance_exact(&g, &profile, 2, 0).unwrap();
            norms.push(mat::frobenius(&(exact.flat() - lead.flat())));
        }
        let ratio = norms[0] / norms[1];
        assert!((ratio - 4.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn identity_activation_fourpoint_matches_linear_covariance() {
        let g = GramMatrix::new(
            Mat::from_row_slice(2, 2, &[1.0, 0.25, 0.25, 0.9]),
            1,
        )
        .unwrap();
        let s1 = 1.4;
        let four = nonlinear_fourpoint_cov(&g, s1, &ActivationSpec::Identity).unwrap();
        // n1 cov for the linear case is the Wick pair tensor of sigma1^2 Gxx.
        let profile = WidthProfile::new(vec![1], 1, vec![s1, 1.0]).unwrap();
        let mut lin = mlp_kernel_covariance(&g, &profile, 1, 0).unwrap();
        lin.scale(1.0); // already includes 1/n1 = 1
        assert!(mat::frobenius(&(four.tensor.flat() - lin.flat())) < 1e-12);
    }

    #[test]
    fn quadratic_diagonal_variance_is_96_sigma8() {
        // var(K_mumu) * n1 = E[h^8] - E[h^4]^2 = 105 s^8 - 9 s^8 = 96 s^8.
        let g = unit_gram(2);
        let s1: f64 = 1.3;
        let act = ActivationSpec::polynomial(vec![0.0, 0.0, 1.0]).unwrap();
        let four = nonlinear_fourpoint_cov(&g, s1, &act).unwrap();
        // h has variance s1, so E[h^8] - E[h^4]^2 = (105 - 9) s1^4.
        let want = 96.0 * libm::pow(s1, 4.0);
        assert!((four.tensor.get(0, 0, 0, 0) - want).abs() < 1e-9 * want);
        assert_eq!(four.se.get(0, 0, 0, 0), 0.0);
    }

    #[test]
    fn diagonal_path_matches_generic_polynomial_path() {
        let g = GramMatrix::new(Mat::from_diagonal(&nalgebra::DVector::from_row_slice(&[1.0, 0.6, 1.4])), 1).unwrap();
        let act = ActivationSpec::polynomial(vec![0.1, 0.0, 1.0]).unwrap();
        let diag = nonlinear_fourpoint_cov(&g, 0.9, &act).unwrap();
        // Perturb the off-diagonals by zero but force the generic route.
        let generic = fourpoint_polynomial(&g, 0.9, &[0.1, 0.0, 1.0]).unwrap();
        let d = diag.tensor.flat() - generic.tensor.flat();
        assert!(mat::frobenius(&d) < 1e-9, "{}", mat::frobenius(&d));
    }

    #[test]
    fn third_cumulant_scalar_chi_square() {
        // p = 1: K = (1/n) sum z^2 with z ~ N(0, c); kappa_3 = 8 c^3 / n^2.
        let g = GramMatrix::new(Mat::from_row_slice(1, 1, &[0.5]), 1).unwrap();
        let t = linear_two_layer_third_cumulant(&g, 2.0, 10).unwrap();
        let c: f64 = 2.0 * 0.5;
        let want = 8.0 * c * c * c / 100.0;
        assert!((t.get((0, 0), (0, 0), (0, 0)) - want).abs() < 1e-14);
    }
}
