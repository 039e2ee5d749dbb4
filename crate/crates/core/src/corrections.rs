//! Leading posterior corrections to hidden-layer kernels.
//!
//! The posterior mean of any hidden-layer observable `O` is, to leading
//! order in the inverse hidden widths,
//! `E_W O + (n_d/2) sum_{rho lambda} Phi_{rho lambda} cov_W(O, K^(d-1)_{rho lambda})`
//! with `Phi = sigma_d^-2 Gamma^-1 G_yy Gamma^-1 - Gamma^-1` and
//! `Gamma = K_inf^(d-1) + I/(beta sigma_d^2)`. This module builds `Phi`, its
//! temperature expansions, and the specialization of the correction to each
//! tractable architecture.

use crate::error::{CoreError, Result};
use crate::gpkernels::{
    cnn_linear_gp, readout_kernel, single_layer_gp, univariate_moment, ActivationSpec, FilterSpec,
    FourIndexKernel, ReadoutStrategy, WidthProfile,
};
use crate::mat::{self, Mat};
use crate::mathcore::{eigendecompose, GramMatrix, Spectrum};
use crate::priorcumulants::{nonlinear_fourpoint_cov, CovTensor, ThirdCumulant};
use alloc::format;
use alloc::vec::Vec;

/// Inverse temperature and readout prior variance.
///
/// `beta` is either a finite value `>= 0` or the explicit zero-temperature
/// limit; the limit mode is only valid where the relevant kernels are
/// invertible (the projector branch for singular kernels is not implemented —
/// use a large finite `beta` instead).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperatureParams {
    beta: BetaParam,
    sigma_d_sq: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaParam {
    Finite(f64),
    ZeroTemperatureLimit,
}

impl TemperatureParams {
    pub fn new(beta: f64, sigma_d_sq: f64) -> Result<Self> {
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(CoreError::invalid("beta must be finite and >= 0"));
        }
        if !(sigma_d_sq > 0.0) || !sigma_d_sq.is_finite() {
            return Err(CoreError::invalid("sigma_d_sq must be positive and finite"));
        }
        Ok(Self { beta: BetaParam::Finite(beta), sigma_d_sq })
    }

    pub fn zero_temperature_limit(sigma_d_sq: f64) -> Result<Self> {
        if !(sigma_d_sq > 0.0) || !sigma_d_sq.is_finite() {
            return Err(CoreError::invalid("sigma_d_sq must be positive and finite"));
        }
        Ok(Self { beta: BetaParam::ZeroTemperatureLimit, sigma_d_sq })
    }

    pub fn beta(&self) -> BetaParam {
        self.beta
    }

    pub fn finite_beta(&self) -> Option<f64> {
        match self.beta {
            BetaParam::Finite(b) => Some(b),
            BetaParam::ZeroTemperatureLimit => None,
        }
    }

    pub fn is_zero_temperature_limit(&self) -> bool {
        matches!(self.beta, BetaParam::ZeroTemperatureLimit)
    }

    pub fn sigma_d_sq(&self) -> f64 {
        self.sigma_d_sq
    }
}

/// The correction operator `Phi` together with the regularized readout
/// kernel `Gamma` it was built from.
#[derive(Debug, Clone)]
pub struct PhiMatrix {
    phi: Mat,
    gamma: Mat,
    gamma_condition: f64,
}

impl PhiMatrix {
    pub fn phi(&self) -> &Mat {
        &self.phi
    }

    /// `Gamma` at finite temperature; the readout kernel itself in the
    /// zero-temperature limit.
    pub fn gamma(&self) -> &Mat {
        &self.gamma
    }

    /// Spectral condition number of `Gamma`. `Gamma` is positive definite at
    /// any finite temperature, but can be ill-conditioned at large `beta`;
    /// callers may want to warn above ~1e12.
    pub fn gamma_condition(&self) -> f64 {
        self.gamma_condition
    }

    pub fn dim(&self) -> usize {
        self.phi.nrows()
    }
}

const INVERTIBLE_REL_FLOOR: f64 = 1e-12;

/// Build `Phi = sigma_d^-2 Gamma^-1 G_yy Gamma^-1 - Gamma^-1` from the
/// readout-layer GP kernel. In zero-temperature-limit mode this degenerates
/// to `Kinf^-1 (sigma_d^-2 G_yy - Kinf) Kinf^-1`, which requires `Kinf`
/// invertible.
pub fn phi_operator(
    k_inf_readout: &GramMatrix,
    gyy: &GramMatrix,
    temp: &TemperatureParams,
) -> Result<PhiMatrix> {
    if k_inf_readout.dim() != gyy.dim() {
        return Err(CoreError::invalid(format!(
            "kernel is {}x{0} but G_yy is {1}x{1}",
            k_inf_readout.dim(),
            gyy.dim()
        )));
    }
    let k = k_inf_readout.entries();
    let sd2 = temp.sigma_d_sq();
    let gamma = match temp.finite_beta() {
        Some(beta) if beta > 0.0 => k + Mat::identity(k.nrows(), k.ncols()) / (beta * sd2),
        Some(_) => {
            return Err(CoreError::invalid(
                "phi_operator needs beta > 0 (at beta = 0 the posterior is the prior and the correction vanishes)",
            ));
        }
        None => {
            let ev = mat::sym_eigenvalues(k);
            let max = ev.last().copied().unwrap_or(0.0);
            let min = ev.first().copied().unwrap_or(0.0);
            if min <= INVERTIBLE_REL_FLOOR * max.max(f64::MIN_POSITIVE) {
                return Err(CoreError::NeedsFiniteTemperature(format!(
                    "readout kernel is singular (min eigenvalue {min:.3e}); the zero-temperature projector branch is not implemented"
                )));
            }
            k.clone()
        }
    };
    let gamma_condition = mat::sym_condition(&gamma);
    let ginv_gyy = mat::spd_solve(&gamma, gyy.entries(), "Gamma")?;
    let ginv_gyy_ginv = mat::spd_solve(&gamma, &ginv_gyy.transpose(), "Gamma")?;
    let ginv = mat::spd_inverse(&gamma, "Gamma")?;
    let phi = mat::symmetrize(&(ginv_gyy_ginv / sd2 - ginv));
    Ok(PhiMatrix { phi, gamma, gamma_condition })
}

/// Leading posterior mean of a kernel-valued observable:
/// `prior_mean + (n_d/2) sum_{rho lambda} Phi_{rho lambda} cov[.., rho lambda]`.
pub fn posterior_mean_leading(
    prior_mean: &Mat,
    cov_with_readout: &CovTensor,
    phi: &PhiMatrix,
    n_d: usize,
) -> Result<Mat> {
    if cov_with_readout.dim() != phi.dim() {
        return Err(CoreError::invalid(format!(
            "covariance second slot has p = {} but Phi has p = {}",
            cov_with_readout.dim(),
            phi.dim()
        )));
    }
    if prior_mean.shape() != (cov_with_readout.dim(), cov_with_readout.dim()) {
        return Err(CoreError::invalid("prior mean shape must match the covariance tensor"));
    }
    let correction = cov_with_readout.contract(phi.phi())?;
    Ok(prior_mean + correction * (n_d as f64 / 2.0))
}

/// Leading posterior covariance of kernel entries:
/// `cov_W + (n_d/2) sum_{mu nu} Phi_{mu nu} kappa3_W(.., .., K_{mu nu})`.
///
/// The third joint cumulant must be supplied (analytically for the depth-2
/// linear case, or estimated by the prior oracle).
pub fn posterior_covariance_correction(
    prior_cov: &CovTensor,
    third_cumulant: Option<&ThirdCumulant>,
    phi: &PhiMatrix,
    n_d: usize,
) -> Result<CovTensor> {
    let third = third_cumulant
        .ok_or_else(|| CoreError::invalid("third joint cumulant input is required"))?;
    let p = prior_cov.dim();
    if third.dim() != p || phi.dim() != p {
        return Err(CoreError::invalid("cumulant and Phi dimensions must match"));
    }
    let mut out = prior_cov.clone();
    let half_nd = n_d as f64 / 2.0;
    for i0 in 0..p {
        for i1 in 0..p {
            for j0 in 0..p {
                for j1 in 0..p {
                    let mut acc = 0.0;
                    for mu in 0..p {
                        for nu in 0..p {
                            acc += phi.phi()[(mu, nu)]
                                * third.get((i0, i1), (j0, j1), (mu, nu));
                        }
                    }
                    let v = out.get(i0, i1, j0, j1) + half_nd * acc;
                    out.set(i0, i1, j0, j1, v);
                }
            }
        }
    }
    Ok(out)
}

/// `m_d^2 = sigma_d^2 * m_{d-1}^2` with the readout variance taken from
/// `temp` (the profile's own last entry is the same quantity in sampler
/// configurations; the temperature parameters win here).
fn m_d_sq(profile: &WidthProfile, temp: &TemperatureParams) -> f64 {
    temp.sigma_d_sq() * profile.m_sq(profile.depth() - 1)
}

/// O(1/n) shift of the layer-`layer` kernel of a deep linear MLP:
/// `m_l^2 * (sum_{l'<=l} n_d/n_{l'}) * G_xx Gamma^-1 (m_d^-2 G_yy - Gamma) Gamma^-1 G_xx`
/// with `Gamma = G_xx + I/(beta m_d^2)`.
pub fn deep_linear_kernel_shift(
    gxx: &GramMatrix,
    gyy: &GramMatrix,
    profile: &WidthProfile,
    temp: &TemperatureParams,
    layer: usize,
) -> Result<Mat> {
    let beta = temp.finite_beta().ok_or_else(|| {
        CoreError::NeedsFiniteTemperature(
            "use deep_linear_zero_temperature_kernel for the explicit limit".into(),
        )
    })?;
    let p = gxx.dim();
    if beta == 0.0 {
        return Ok(Mat::zeros(p, p));
    }
    let md2 = m_d_sq(profile, temp);
    let gamma = gxx.entries() + Mat::identity(p, p) / (beta * md2);
    let bracket = gyy.entries() / md2 - &gamma;
    let ginv_gxx = mat::spd_solve(&gamma, gxx.entries(), "Gamma")?;
    let shift = ginv_gxx.transpose() * bracket * &ginv_gxx;
    let wf = profile.width_factor(layer)?;
    Ok(mat::symmetrize(&shift) * (profile.m_sq(layer) * wf))
}

/// Posterior mean kernel `<K^(layer)>` of a deep linear MLP to `O(1/n)`.
pub fn deep_linear_posterior_kernel(
    gxx: &GramMatrix,
    gyy: &GramMatrix,
    profile: &WidthProfile,
    temp: &TemperatureParams,
    layer: usize,
) -> Result<GramMatrix> {
    let shift = deep_linear_kernel_shift(gxx, gyy, profile, temp, layer)?;
    let mean = gxx.entries() * profile.m_sq(layer) + shift;
    GramMatrix::new(mat::symmetrize(&mean), gxx.normalizer())
}

/// Zero-temperature limit of the deep linear posterior kernel:
/// `m_l^2 [G_xx + (sum n_d/n_{l'}) (m_d^-2 G_yy - G_xx)]`; the average
/// kernel linearly interpolates between the input and output Gram matrices.
/// Requires invertible `G_xx`.
pub fn deep_linear_zero_temperature_kernel(
    gxx: &GramMatrix,
    gyy: &GramMatrix,
    profile: &WidthProfile,
    temp: &TemperatureParams,
    layer: usize,
) -> Result<Mat> {
    let ev = mat::sym_eigenvalues(gxx.entries());
    let max = ev.last().copied().unwrap_or(0.0);
    let min = ev.first().copied().unwrap_or(0.0);
    if min <= INVERTIBLE_REL_FLOOR * max.max(f64::MIN_POSITIVE) {
        return Err(CoreError::NeedsFiniteTemperature(format!(
            "G_xx is singular (min eigenvalue {min:.3e}); use a large finite beta"
        )));
    }
    let md2 = m_d_sq(profile, temp);
    let wf = profile.width_factor(layer)?;
    let interp = gxx.entries() + (gyy.entries() / md2 - gxx.entries()) * wf;
    Ok(interp * profile.m_sq(layer))
}

/// Deep-linear correction rotated into the eigenbasis of `G_xx`.
#[derive(Debug, Clone)]
pub struct EigenbasisCorrection {
    /// Eigendecomposition of `G_xx`.
    pub spectrum: Spectrum,
    /// `lambda~ = beta m_d^2 lambda / (1 + beta m_d^2 lambda)`, always in
    /// `[0, 1]` and nondecreasing in `beta`.
    pub lambda_tilde: Vec<f64>,
    /// `U^T Delta U` for the shift `Delta` of `<K^(layer)>`.
    pub rotated_shift: Mat,
}

/// Eigenbasis form of the deep linear correction: in the basis of `G_xx`,
/// the conjugation by `Gamma^-1 G_xx` becomes the diagonal suppression
/// `lambda~`, so small-eigenvalue directions of the target projection are
/// damped.
pub fn deep_linear_eigenbasis(
    gxx: &GramMatrix,
    gyy: &GramMatrix,
    profile: &WidthProfile,
    temp: &TemperatureParams,
    layer: usize,
) -> Result<EigenbasisCorrection> {
    let beta = temp.finite_beta().ok_or_else(|| {
        CoreError::NeedsFiniteTemperature("eigenbasis form needs finite beta".into())
    })?;
    let spectrum = eigendecompose(gxx.entries())?;
    let md2 = m_d_sq(profile, temp);
    let lambda_tilde: Vec<f64> = spectrum
        .eigenvalues()
        .iter()
        .map(|&l| {
            let x = beta * md2 * l.max(0.0);
            x / (1.0 + x)
        })
        .collect();
    let u = spectrum.eigenvectors();
    let gyy_rot = u.transpose() * gyy.entries() * u;
    let p = gxx.dim();
    let wf = profile.width_factor(layer)?;
    let m_l_sq = profile.m_sq(layer);
    let mut rotated = Mat::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            let suppressed = lambda_tilde[i] * gyy_rot[(i, j)] * lambda_tilde[j] / md2;
            let diag = if i == j { lambda_tilde[i] * spectrum.eigenvalues()[i] } else { 0.0 };
            rotated[(i, j)] = m_l_sq * wf * (suppressed - diag);
        }
    }
    Ok(EigenbasisCorrection { spectrum, lambda_tilde, rotated_shift: rotated })
}

/// Truncated high-temperature expansion of `Phi` in powers of
/// `t = beta sigma_d^2`:
/// `Phi = -t I + t^2 (sigma_d^-2 G_yy + K_inf) + O(t^3)`, valid for
/// `t < 1/||K_inf||`.
pub fn phi_high_temperature_series(
    k_inf_readout: &GramMatrix,
    gyy: &GramMatrix,
    temp: &TemperatureParams,
    order: usize,
) -> Result<Mat> {
    if order > 2 {
        return Err(CoreError::invalid("high-temperature series implemented through order 2"));
    }
    let beta = temp
        .finite_beta()
        .ok_or_else(|| CoreError::invalid("high-temperature series needs finite beta"))?;
    let p = k_inf_readout.dim();
    let t = beta * temp.sigma_d_sq();
    if t == 0.0 || order == 0 {
        return Ok(Mat::zeros(p, p));
    }
    let k_norm = mat::sym_eigenvalues(k_inf_readout.entries())
        .iter()
        .fold(0.0f64, |a, &b| a.max(b.abs()));
    if t * k_norm >= 1.0 {
        return Err(CoreError::DivergentSeries { radius: t * k_norm });
    }
    let mut phi = -t * Mat::identity(p, p);
    if order >= 2 {
        phi += (t * t) * (gyy.entries() / temp.sigma_d_sq() + k_inf_readout.entries());
    }
    Ok(phi)
}

/// O(1/n) shift of the four-index CNN kernel at `layer`, for vectorization
/// or global-average-pooling readout (other projections depend on the filter
/// weights and are rejected):
/// `pref * (sum n_d/n_{l'}) * M (Phi (x) S) M` on the flattened kernel `M`,
/// with `S = I_s/s` (vectorization) or `u u^T` (uniform projection) and
/// `pref = sigma_{l+1}^2 ... sigma_{d-1}^2`.
pub fn cnn_kernel_shift(
    gxx_tensor: &FourIndexKernel,
    gyy: &GramMatrix,
    filters: &[FilterSpec],
    profile: &WidthProfile,
    temp: &TemperatureParams,
    layer: usize,
    readout: &ReadoutStrategy,
) -> Result<Mat> {
    if !readout.is_uniform() {
        return Err(CoreError::UnsupportedReadout(
            "the v-independent correction only holds for vectorization or global average pooling"
                .into(),
        ));
    }
    let s = gxx_tensor.sites();
    let d = profile.depth();
    let k_inf_l = cnn_linear_gp(gxx_tensor, filters, profile, layer)?;
    if temp.finite_beta() == Some(0.0) {
        let n = k_inf_l.flat().nrows();
        return Ok(Mat::zeros(n, n));
    }
    let k_inf_last = if layer == d - 1 {
        k_inf_l.clone()
    } else {
        cnn_linear_gp(gxx_tensor, filters, profile, d - 1)?
    };
    let k_readout = readout_kernel(&k_inf_last, readout)?;
    let phi = phi_operator(&k_readout, gyy, temp)?;
    let spatial_weights = match readout {
        ReadoutStrategy::Vectorization => Mat::identity(s, s) / s as f64,
        ReadoutStrategy::Projection(u) => {
            let uv = Mat::from_column_slice(s, 1, u);
            &uv * uv.transpose()
        }
    };
    let pref = profile.sigma_sq_product(layer + 1, d - 1);
    let wf = profile.width_factor(layer)?;
    let big = mat::kron(phi.phi(), &spatial_weights);
    let shift = k_inf_l.flat() * big * k_inf_l.flat();
    Ok(mat::symmetrize(&shift) * (pref * wf))
}

/// Posterior mean of the four-index CNN kernel to `O(1/n)`.
#[allow(clippy::too_many_arguments)]
pub fn cnn_posterior_kernel(
    gxx_tensor: &FourIndexKernel,
    gyy: &GramMatrix,
    filters: &[FilterSpec],
    profile: &WidthProfile,
    temp: &TemperatureParams,
    layer: usize,
    readout: &ReadoutStrategy,
) -> Result<FourIndexKernel> {
    let k_inf = cnn_linear_gp(gxx_tensor, filters, profile, layer)?;
    let shift = cnn_kernel_shift(gxx_tensor, gyy, filters, profile, temp, layer, readout)?;
    FourIndexKernel::new(
        mat::symmetrize(&(k_inf.flat() + shift)),
        gxx_tensor.samples(),
        gxx_tensor.spatial().clone(),
    )
}

/// Which evaluation route [`single_layer_posterior_kernel`] takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SingleLayerRoute {
    /// Diagonal closed form when `G_xx` is diagonal, generic otherwise.
    Auto,
    /// Dense solves plus the generic four-point tensor.
    Generic,
    /// Sherman–Morrison form of `Gamma^-1` (diagonal-plus-rank-1 `K_inf`)
    /// with factorized moments; requires diagonal `G_xx` and finite `beta`.
    DiagonalClosedForm,
}

/// Posterior mean kernel of the single nonlinear hidden layer with entrywise
/// standard errors (nonzero only where quadrature/MC paths were used).
#[derive(Debug, Clone)]
pub struct SingleLayerPosterior {
    pub kernel: GramMatrix,
    pub se: Mat,
}

/// `<K>` to `O(1/n_1)` for the depth-2 network with activation `act`:
/// `K_inf + (n_d / 2 n_1) sum Phi cov4` where `cov4` is the scaled
/// four-point tensor of [`nonlinear_fourpoint_cov`].
#[allow(clippy::too_many_arguments)]
pub fn single_layer_posterior_kernel(
    gxx: &GramMatrix,
    gyy: &GramMatrix,
    sigma1_sq: f64,
    act: &ActivationSpec,
    temp: &TemperatureParams,
    n1: usize,
    n_d: usize,
    route: SingleLayerRoute,
) -> Result<SingleLayerPosterior> {
    if n1 == 0 || n_d == 0 {
        return Err(CoreError::invalid("widths must be positive"));
    }
    let diagonal_input = is_diagonal_gram(gxx);
    let use_diag = match route {
        SingleLayerRoute::Auto => diagonal_input && !temp.is_zero_temperature_limit(),
        SingleLayerRoute::Generic => false,
        SingleLayerRoute::DiagonalClosedForm => {
            if !diagonal_input {
                return Err(CoreError::invalid("diagonal closed form needs diagonal G_xx"));
            }
            true
        }
    };

    let (k_inf, k_inf_se, phi) = if use_diag {
        let beta = temp.finite_beta().filter(|&b| b > 0.0).ok_or_else(|| {
            CoreError::NeedsFiniteTemperature("diagonal closed form needs finite beta > 0".into())
        })?;
        let p = gxx.dim();
        // K_inf = diag(var[phi_mu]) + mean vector outer product.
        let mut means = Vec::with_capacity(p);
        let mut vars = Vec::with_capacity(p);
        for mu in 0..p {
            let sd = libm::sqrt(sigma1_sq * gxx.entries()[(mu, mu)]);
            let m1 = univariate_moment(act, sd, 1);
            let m2 = univariate_moment(act, sd, 2);
            means.push(m1);
            vars.push(m2 - m1 * m1);
        }
        let mvec = Mat::from_column_slice(p, 1, &means);
        let k_inf_m =
            Mat::from_fn(p, p, |i, j| if i == j { vars[i] } else { 0.0 }) + &mvec * mvec.transpose();
        // Sherman-Morrison inverse of Gamma = D + m m^T,
        // D = diag(var + 1/(beta sigma_d^2)).
        let sd2 = temp.sigma_d_sq();
        let dinv: Vec<f64> = vars.iter().map(|&v| 1.0 / (v + 1.0 / (beta * sd2))).collect();
        let denom = 1.0 + (0..p).map(|i| means[i] * means[i] * dinv[i]).sum::<f64>();
        let mut ginv = Mat::zeros(p, p);
        for i in 0..p {
            for j in 0..p {
                let rank1 = dinv[i] * means[i] * means[j] * dinv[j] / denom;
                ginv[(i, j)] = if i == j { dinv[i] - rank1 } else { -rank1 };
            }
        }
        let gamma = &k_inf_m + Mat::identity(p, p) / (beta * sd2);
        let phi_m = mat::symmetrize(&(&ginv * gyy.entries() * &ginv / sd2 - &ginv));
        let gamma_condition = mat::sym_condition(&gamma);
        (
            GramMatrix::new(mat::symmetrize(&k_inf_m), 1)?,
            Mat::zeros(p, p),
            PhiMatrix { phi: phi_m, gamma, gamma_condition },
        )
    } else {
        let est = single_layer_gp(gxx, sigma1_sq, act)?;
        let phi = phi_operator(&est.kernel, gyy, temp)?;
        (est.kernel, est.se, phi)
    };

    let four = nonlinear_fourpoint_cov(gxx, sigma1_sq, act)?;
    let scale = n_d as f64 / (2.0 * n1 as f64);
    let shift = four.tensor.contract(phi.phi())? * scale;
    let mean = mat::symmetrize(&(k_inf.entries() + shift));

    // Error propagation: quadrature error of K_inf plus the contracted MC
    // error of the four-point tensor, combined in quadrature.
    let p = gxx.dim();
    let mut se = Mat::zeros(p, p);
    for mu in 0..p {
        for nu in 0..p {
            let mut var = k_inf_se[(mu, nu)] * k_inf_se[(mu, nu)];
            for rho in 0..p {
                for lambda in 0..p {
                    let w = scale * phi.phi()[(rho, lambda)];
                    let s = four.se.get(mu, nu, rho, lambda);
                    var += w * w * s * s;
                }
            }
            se[(mu, nu)] = libm::sqrt(var);
        }
    }

    Ok(SingleLayerPosterior { kernel: GramMatrix::new(mean, 1)?, se })
}

fn is_diagonal_gram(g: &GramMatrix) -> bool {
    let m = g.entries();
    let max_diag = (0..m.nrows()).map(|i| m[(i, i)].abs()).fold(0.0f64, f64::max);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if i != j && m[(i, j)].abs() > 1e-12 * max_diag.max(1.0) {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gram(entries: &[f64], p: usize) -> GramMatrix {
        GramMatrix::new(Mat::from_row_slice(p, p, entries), 1).unwrap()
    }

    #[test]
    fn scalar_phi_cancellation() {
        // p = 1, K_inf = 1, beta = 1, sigma_d = 1 (Gamma = 2), G_yy = 2:
        // Phi = 2/4 - 1/2 = 0.
        let k = gram(&[1.0], 1);
        let gyy = gram(&[2.0], 1);
        let temp = TemperatureParams::new(1.0, 1.0).unwrap();
        let phi = phi_operator(&k, &gyy, &temp).unwrap();
        assert!(phi.phi()[(0, 0)].abs() < 1e-15);
    }

    #[test]
    fn high_temperature_leading_term() {
        let k = gram(&[1.0, 0.2, 0.2, 0.8], 2);
        let gyy = gram(&[0.5, 0.1, 0.1, 0.4], 2);
        let temp = TemperatureParams::new(1e-6, 1.0).unwrap();
        let exact = phi_operator(&k, &gyy, &temp).unwrap();
        let order1 = phi_high_temperature_series(&k, &gyy, &temp, 1).unwrap();
        // Phi ~ -beta sigma_d^2 I with relative error O(beta sigma_d^2).
        let rel = mat::frobenius(&(exact.phi() - &order1)) / mat::frobenius(&order1);
        assert!(rel < 1e-5, "rel {rel}");
    }

    #[test]
    fn zero_beta_series_is_zero() {
        let k = gram(&[1.0], 1);
        let gyy = gram(&[1.0], 1);
        let temp = TemperatureParams::new(0.0, 1.0).unwrap();
        let phi = phi_high_temperature_series(&k, &gyy, &temp, 2).unwrap();
        assert_eq!(phi[(0, 0)], 0.0);
    }

    #[test]
    fn correction_vanishes_when_gyy_matches_gamma() {
        // G_yy = m_d^2 Gamma makes the bracket vanish identically.
        let gxx = gram(&[1.0, 0.3, 0.3, 0.9], 2);
        let profile = WidthProfile::new(alloc::vec![32, 32], 2, alloc::vec![1.0, 1.0, 1.0]).unwrap();
        let temp = TemperatureParams::new(2.0, 1.0).unwrap();
        let md2 = 1.0;
        let gamma = gxx.entries() + Mat::identity(2, 2) / (2.0 * md2);
        let gyy = GramMatrix::new(md2 * gamma, 1).unwrap();
        let shift = deep_linear_kernel_shift(&gxx, &gyy, &profile, &temp, 1).unwrap();
        assert!(mat::frobenius(&shift) < 1e-14);
    }

    #[test]
    fn layer_shift_ratio_is_exactly_two() {
        let gxx = gram(&[1.0, 0.4, 0.4, 1.1], 2);
        let gyy = gram(&[0.9, 0.0, 0.0, 0.7], 2);
        let profile =
            WidthProfile::new(alloc::vec![48, 48], 3, alloc::vec![1.0, 1.0, 1.0]).unwrap();
        let temp = TemperatureParams::new(1.0, 1.0).unwrap();
        let s1 = deep_linear_kernel_shift(&gxx, &gyy, &profile, &temp, 1).unwrap();
        let s2 = deep_linear_kernel_shift(&gxx, &gyy, &profile, &temp, 2).unwrap();
        // Equal widths and unit variances: the shifts differ exactly by the
        // width-factor ratio 2.
        assert_eq!(s2, s1 * 2.0);
    }

    #[test]
    fn zero_temperature_interpolation_fixed_point() {
        let gxx = gram(&[1.0, 0.2, 0.2, 0.8], 2);
        let profile =
            WidthProfile::new(alloc::vec![64, 64], 2, alloc::vec![1.3, 0.7, 1.0]).unwrap();
        let temp = TemperatureParams::zero_temperature_limit(1.0).unwrap();
        let md2 = temp.sigma_d_sq() * profile.m_sq(2);
        let gyy = GramMatrix::new(md2 * gxx.entries(), 1).unwrap();
        let k = deep_linear_zero_temperature_kernel(&gxx, &gyy, &profile, &temp, 2).unwrap();
        let want = gxx.entries() * profile.m_sq(2);
        assert!(mat::frobenius(&(k - want)) < 1e-12);
    }

    #[test]
    fn lambda_tilde_bounds_and_fixed_point() {
        let gxx = gram(&[2.0, 0.0, 0.0, 0.5], 2);
        let gyy = gram(&[1.0, 0.0, 0.0, 1.0], 2);
        let profile = WidthProfile::new(alloc::vec![16], 1, alloc::vec![1.0, 1.0]).unwrap();
        // beta m_d^2 lambda = 1 at lambda = 2 when beta = 0.5.
        let temp = TemperatureParams::new(0.5, 1.0).unwrap();
        let eb = deep_linear_eigenbasis(&gxx, &gyy, &profile, &temp, 1).unwrap();
        assert!((eb.lambda_tilde[0] - 0.5).abs() < 1e-14);
        for &lt in &eb.lambda_tilde {
            assert!((0.0..=1.0).contains(&lt));
        }
    }

    #[test]
    fn eigenbasis_matches_direct_shift() {
        let gxx = gram(&[1.0, 0.35, 0.35, 0.9], 2);
        let gyy = gram(&[0.8, -0.1, -0.1, 0.6], 2);
        let profile =
            WidthProfile::new(alloc::vec![24, 8], 2, alloc::vec![1.2, 0.8, 1.0]).unwrap();
        let temp = TemperatureParams::new(1.7, 0.9).unwrap();
        let direct = deep_linear_kernel_shift(&gxx, &gyy, &profile, &temp, 2).unwrap();
        let eb = deep_linear_eigenbasis(&gxx, &gyy, &profile, &temp, 2).unwrap();
        let u = eb.spectrum.eigenvectors();
        let back = u * &eb.rotated_shift * u.transpose();
        assert!(mat::frobenius(&(back - direct)) < 1e-10);
    }

    #[test]
    fn posterior_mean_trivial_cases() {
        let prior = Mat::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.9]);
        let cov = CovTensor::zeros(2);
        let k = gram(&[1.0, 0.0, 0.0, 1.0], 2);
        let gyy = gram(&[1.0, 0.0, 0.0, 1.0], 2);
        let temp = TemperatureParams::new(1.0, 1.0).unwrap();
        let phi = phi_operator(&k, &gyy, &temp).unwrap();
        let out = posterior_mean_leading(&prior, &cov, &phi, 3).unwrap();
        assert_eq!(out, prior);
    }
}
