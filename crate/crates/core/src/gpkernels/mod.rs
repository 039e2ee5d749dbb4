//! Infinite-width (GP) kernels for the architectures covered by the crate:
//! deep linear MLPs, deep linear CNNs with circular padding, networks with a
//! single nonlinear hidden layer, and linear networks with arbitrary forward
//! skip connections.

mod conv;
mod gauss_exp;

pub use conv::{
    cnn_linear_gp, readout_kernel, FilterSpec, FourIndexKernel, ReadoutStrategy, SpatialShape,
};
pub use gauss_exp::{
    gauss_hermite, norm_inv_cdf, pair_expectation, univariate_moment, PairExpectation,
    QMC_BATCHES, QMC_POINTS_PER_BATCH,
};

use crate::error::{CoreError, Result};
use crate::mat::Mat;
use crate::mathcore::GramMatrix;
use alloc::format;
use alloc::vec::Vec;

/// Hidden widths `n_1..n_{d-1}`, output width `n_d`, and prior variances
/// `sigma_1^2..sigma_d^2` of a depth-`d` network.
#[derive(Debug, Clone, PartialEq)]
pub struct WidthProfile {
    hidden_widths: Vec<usize>,
    output_width: usize,
    prior_variances: Vec<f64>,
}

impl WidthProfile {
    pub fn new(
        hidden_widths: Vec<usize>,
        output_width: usize,
        prior_variances: Vec<f64>,
    ) -> Result<Self> {
        if hidden_widths.is_empty() {
            return Err(CoreError::invalid("need at least one hidden layer (depth >= 2)"));
        }
        if prior_variances.len() != hidden_widths.len() + 1 {
            return Err(CoreError::invalid(format!(
                "need {} prior variances (one per layer incl. readout), got {}",
                hidden_widths.len() + 1,
                prior_variances.len()
            )));
        }
        if hidden_widths.contains(&0) || output_width == 0 {
            return Err(CoreError::invalid("all widths must be >= 1"));
        }
        if prior_variances.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(CoreError::invalid("all prior variances must be positive and finite"));
        }
        Ok(Self { hidden_widths, output_width, prior_variances })
    }

    /// Equal hidden widths and unit variances everywhere.
    pub fn uniform(depth: usize, hidden_width: usize, output_width: usize) -> Result<Self> {
        if depth < 2 {
            return Err(CoreError::invalid("depth must be >= 2"));
        }
        Self::new(
            alloc::vec![hidden_width; depth - 1],
            output_width,
            alloc::vec![1.0; depth],
        )
    }

    /// Number of layers `d` (hidden layers plus readout).
    pub fn depth(&self) -> usize {
        self.prior_variances.len()
    }

    pub fn hidden_widths(&self) -> &[usize] {
        &self.hidden_widths
    }

    pub fn output_width(&self) -> usize {
        self.output_width
    }

    /// Width of layer `layer` (1-based; `depth()` is the readout).
    pub fn width(&self, layer: usize) -> usize {
        if layer == self.depth() {
            self.output_width
        } else {
            self.hidden_widths[layer - 1]
        }
    }

    /// `sigma_layer^2` (1-based).
    pub fn sigma_sq(&self, layer: usize) -> f64 {
        self.prior_variances[layer - 1]
    }

    /// `m_layer^2 = sigma_1^2 ... sigma_layer^2`.
    pub fn m_sq(&self, layer: usize) -> f64 {
        self.prior_variances[..layer].iter().product()
    }

    /// Product `sigma_{from}^2 ... sigma_{to}^2`, 1 when `from > to`.
    pub fn sigma_sq_product(&self, from: usize, to: usize) -> f64 {
        if from > to {
            1.0
        } else {
            self.prior_variances[from - 1..to].iter().product()
        }
    }

    fn check_hidden_layer(&self, layer: usize) -> Result<()> {
        if layer == 0 || layer >= self.depth() {
            return Err(CoreError::invalid(format!(
                "layer {layer} out of range 1..={}",
                self.depth() - 1
            )));
        }
        Ok(())
    }

    /// `sum_{l'<=layer} 1/n_{l'}`, accumulated in exact integer rationals
    /// before the single conversion to `f64`, so that doubling every width
    /// halves the result bit-exactly.
    pub fn inverse_width_sum(&self, layer: usize) -> Result<f64> {
        self.check_hidden_layer(layer)?;
        let (num, den) = self.inverse_width_rational(layer);
        Ok(num as f64 / den as f64)
    }

    /// `sum_{l'<=layer} n_d/n_{l'}` with the same exact-rational guarantee.
    pub fn width_factor(&self, layer: usize) -> Result<f64> {
        self.check_hidden_layer(layer)?;
        let (num, den) = self.inverse_width_rational(layer);
        let num = num * self.output_width as u128;
        let g = gcd(num, den);
        Ok((num / g) as f64 / (den / g) as f64)
    }

    fn inverse_width_rational(&self, layer: usize) -> (u128, u128) {
        let mut num: u128 = 0;
        let mut den: u128 = 1;
        for &n in &self.hidden_widths[..layer] {
            let n = n as u128;
            num = num * n + den;
            den *= n;
            let g = gcd(num, den);
            num /= g;
            den /= g;
        }
        (num, den)
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a.max(1)
}

/// Pointwise activation of the single nonlinear hidden layer.
#[derive(Clone)]
pub enum ActivationSpec {
    Identity,
    Relu,
    Erf,
    /// Coefficients in ascending powers; degree capped at 4 so exact-moment
    /// paths stay inside the pairing-enumeration bound.
    Polynomial(Vec<f64>),
    Custom(fn(f64) -> f64),
}

impl core::fmt::Debug for ActivationSpec {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            ActivationSpec::Identity => write!(f, "Identity"),
            ActivationSpec::Relu => write!(f, "Relu"),
            ActivationSpec::Erf => write!(f, "Erf"),
            ActivationSpec::Polynomial(c) => write!(f, "Polynomial({c:?})"),
            ActivationSpec::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl ActivationSpec {
    pub fn polynomial(coeffs: Vec<f64>) -> Result<Self> {
        let degree = coeffs.len().saturating_sub(1);
        if degree > 4 {
            return Err(CoreError::invalid(format!(
                "polynomial activation degree {degree} > 4 (exact-moment cap)"
            )));
        }
        if coeffs.is_empty() {
            return Err(CoreError::invalid("polynomial needs at least one coefficient"));
        }
        Ok(ActivationSpec::Polynomial(coeffs))
    }

    pub fn apply(&self, x: f64) -> f64 {
        match self {
            ActivationSpec::Identity => x,
            ActivationSpec::Relu => x.max(0.0),
            ActivationSpec::Erf => libm::erf(x),
            ActivationSpec::Polynomial(c) => {
                let mut acc = 0.0;
                for &ci in c.iter().rev() {
                    acc = acc * x + ci;
                }
                acc
            }
            ActivationSpec::Custom(f) => f(x),
        }
    }

    /// Coefficient view when the activation is an exact-moment polynomial
    /// (identity included).
    pub fn as_polynomial(&self) -> Option<Vec<f64>> {
        match self {
            ActivationSpec::Identity => Some(alloc::vec![0.0, 1.0]),
            ActivationSpec::Polynomial(c) => Some(c.clone()),
            _ => None,
        }
    }
}

/// GP kernel of hidden layer `layer` of a deep linear MLP:
/// `m_layer^2 * G_xx`.
pub fn mlp_linear_gp(gxx: &GramMatrix, profile: &WidthProfile, layer: usize) -> Result<GramMatrix> {
    profile.check_hidden_layer(layer)?;
    gxx.scaled(profile.m_sq(layer))
}

/// Exact GP kernel of a single hidden layer with activation `act`:
/// `E[phi(h_mu) phi(h_nu)]` for `h ~ N(0, sigma1_sq * G_xx)`.
///
/// Polynomial activations are evaluated exactly by pairing enumeration;
/// relu/erf/custom activations use the fixed-seed randomized low-discrepancy
/// quadrature of [`pair_expectation`], and the returned `se` holds its
/// standard-error estimate (zeros on exact paths).
pub fn single_layer_gp(
    gxx: &GramMatrix,
    sigma1_sq: f64,
    act: &ActivationSpec,
) -> Result<KernelWithSe> {
    if !(sigma1_sq > 0.0) {
        return Err(CoreError::invalid("sigma1_sq must be positive"));
    }
    if let ActivationSpec::Identity = act {
        return Ok(KernelWithSe {
            kernel: gxx.scaled(sigma1_sq)?,
            se: Mat::zeros(gxx.dim(), gxx.dim()),
        });
    }
    let p = gxx.dim();
    let g = gxx.entries();
    let mut k = Mat::zeros(p, p);
    let mut se = Mat::zeros(p, p);
    for mu in 0..p {
        for nu in mu..p {
            let est = pair_expectation(
                sigma1_sq * g[(mu, mu)],
                sigma1_sq * g[(mu, nu)],
                sigma1_sq * g[(nu, nu)],
                act,
                act,
            )?;
            k[(mu, nu)] = est.value;
            k[(nu, mu)] = est.value;
            se[(mu, nu)] = est.se;
            se[(nu, mu)] = est.se;
        }
    }
    Ok(KernelWithSe { kernel: GramMatrix::new(k, 1)?, se })
}

/// Iterated GP recursion for a deep MLP with pointwise activation `act`:
/// postactivation kernel of layer `layer`. Linear activations reproduce
/// [`mlp_linear_gp`]; nonlinear ones apply [`single_layer_gp`] layer by
/// layer (uncertainty of the quadrature is propagated only as the last
/// step's standard error).
pub fn deep_gp_kernel(
    gxx: &GramMatrix,
    profile: &WidthProfile,
    act: &ActivationSpec,
    layer: usize,
) -> Result<KernelWithSe> {
    profile.check_hidden_layer(layer)?;
    let mut current = KernelWithSe {
        kernel: gxx.clone(),
        se: Mat::zeros(gxx.dim(), gxx.dim()),
    };
    for l in 1..=layer {
        current = single_layer_gp(&current.kernel, profile.sigma_sq(l), act)?;
    }
    Ok(current)
}

/// Kernel estimate together with entrywise standard errors (zero on exact
/// evaluation paths).
#[derive(Debug, Clone)]
pub struct KernelWithSe {
    pub kernel: GramMatrix,
    pub se: Mat,
}

/// Edge variances `sigma_{l,l'}^2` of a feedforward linear network with
/// arbitrary skip connections; `0 <= l' < l <= d` and zero means no edge.
#[derive(Debug, Clone)]
pub struct SkipConnectivity {
    /// `sigma_sq[l-1][l']` is the variance on the edge from layer `l'` into
    /// layer `l`.
    sigma_sq: Vec<Vec<f64>>,
}

impl SkipConnectivity {
    pub fn new(sigma_sq: Vec<Vec<f64>>) -> Result<Self> {
        if sigma_sq.is_empty() {
            return Err(CoreError::invalid("connectivity needs at least one layer"));
        }
        for (i, row) in sigma_sq.iter().enumerate() {
            let l = i + 1;
            if row.len() != l {
                return Err(CoreError::invalid(format!(
                    "layer {l} must list {l} incoming variances (from layers 0..{l}), got {}",
                    row.len()
                )));
            }
            if row.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                return Err(CoreError::invalid("edge variances must be finite and >= 0"));
            }
            if row.iter().all(|&v| v == 0.0) {
                return Err(CoreError::invalid(format!("layer {l} has no incoming edge")));
            }
        }
        Ok(Self { sigma_sq })
    }

    /// Plain chain: the only edges are `l-1 -> l` with the profile's
    /// variances.
    pub fn chain(profile: &WidthProfile) -> Self {
        let d = profile.depth();
        let mut sigma_sq = Vec::with_capacity(d);
        for l in 1..=d {
            let mut row = alloc::vec![0.0; l];
            row[l - 1] = profile.sigma_sq(l);
            sigma_sq.push(row);
        }
        Self { sigma_sq }
    }

    /// Depth `d` (readout included).
    pub fn depth(&self) -> usize {
        self.sigma_sq.len()
    }

    pub fn edge(&self, layer: usize, from: usize) -> f64 {
        self.sigma_sq[layer - 1][from]
    }
}

/// GP-scale recurrence `m_{l,tau}^2 = m_{l,tau-1}^2 + m_{tau,tau-1}^2 *
/// sigma_{l,tau}^2` (base `m_{l,0}^2 = sigma_{l,0}^2`) for a linear network
/// with skip connections: the GP kernel of layer `l` is
/// `m_{l,l-1}^2 * G_xx`, and plain-chain connectivity reduces it to `m_l^2`.
pub fn skip_gp_scale(conn: &SkipConnectivity, layer: usize, tau: usize) -> Result<f64> {
    if layer == 0 || layer > conn.depth() || tau >= layer {
        return Err(CoreError::invalid(format!(
            "need 0 <= tau < layer <= {}, got layer {layer}, tau {tau}",
            conn.depth()
        )));
    }
    // m2[l-1] tracks m_{l,t}^2 while t sweeps 0..=tau.
    let mut m2: Vec<f64> = (1..=conn.depth()).map(|l| conn.edge(l, 0)).collect();
    for t in 1..=tau {
        let pass_through = m2[t - 1]; // m_{t,t-1}^2: finalized once t-1 < t
        for l in (t + 1)..=conn.depth() {
            m2[l - 1] += pass_through * conn.edge(l, t);
        }
    }
    Ok(m2[layer - 1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn width_factor_is_exact_rational() {
        let p = WidthProfile::new(alloc::vec![64, 64], 2, alloc::vec![1.0, 1.0, 1.0]).unwrap();
        let doubled = WidthProfile::new(alloc::vec![128, 128], 2, alloc::vec![1.0, 1.0, 1.0]).unwrap();
        assert_eq!(p.width_factor(2).unwrap(), 2.0 * p.width_factor(1).unwrap());
        assert_eq!(doubled.width_factor(2).unwrap(), 0.5 * p.width_factor(2).unwrap());
    }

    #[test]
    fn m_sq_monotone_for_expanding_variances() {
        let p = WidthProfile::new(alloc::vec![4, 4, 4], 1, alloc::vec![1.5, 2.0, 1.1, 3.0]).unwrap();
        for l in 2..=p.depth() {
            assert!(p.m_sq(l) > p.m_sq(l - 1));
        }
    }

    #[test]
    fn skip_scale_chain_reduces_to_variance_product() {
        let profile =
            WidthProfile::new(alloc::vec![8, 8, 8], 2, alloc::vec![2.0, 3.0, 0.5, 1.0]).unwrap();
        let conn = SkipConnectivity::chain(&profile);
        for l in 1..=3 {
            let got = skip_gp_scale(&conn, l, l - 1).unwrap();
            assert!((got - profile.m_sq(l)).abs() < 1e-14);
        }
    }

    #[test]
    fn skip_scale_two_path_sum() {
        // d = 3, unit chain variances plus an input -> layer-2 skip.
        let sigma_sq = alloc::vec![
            alloc::vec![1.0],
            alloc::vec![1.0, 1.0],
            alloc::vec![0.0, 0.0, 1.0],
        ];
        let conn = SkipConnectivity::new(sigma_sq).unwrap();
        assert!((skip_gp_scale(&conn, 2, 1).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn disconnected_layer_rejected() {
        let sigma_sq = alloc::vec![alloc::vec![1.0], alloc::vec![0.0, 0.0]];
        assert!(SkipConnectivity::new(sigma_sq).is_err());
    }

    #[test]
    fn polynomial_degree_cap() {
        assert!(ActivationSpec::polynomial(alloc::vec![0.0; 6]).is_err());
        assert!(ActivationSpec::polynomial(alloc::vec![0.0, 1.0, 0.5]).is_ok());
    }
}
