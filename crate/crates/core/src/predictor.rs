//! Predictor statistics with `O(1/n)` corrections for deep linear networks,
//! thermal bias–variance decompositions, and consistency checks against two
//! independently published zero-temperature results.

use crate::corrections::TemperatureParams;
use crate::error::{CoreError, Result};
use crate::mat::{self, Mat};
use crate::mathcore::{cross_gram, eigendecompose, pseudoinverse, GramMatrix, DEFAULT_PINV_TOL};
use crate::sampler::Dataset;
use alloc::format;
use alloc::vec::Vec;

/// Train and test data with all Gram blocks of the stacked dataset.
#[derive(Debug, Clone)]
pub struct TestSet {
    train: Dataset,
    test: Dataset,
    input_normalizer: usize,
    gxx: GramMatrix,
    gxh: Mat,
    ghh: GramMatrix,
    gyy: GramMatrix,
    gyh: Mat,
    ghyhy: GramMatrix,
}

impl TestSet {
    pub fn new(train: Dataset, test: Dataset, input_normalizer: usize) -> Result<Self> {
        if train.input_dim() != test.input_dim() {
            return Err(CoreError::invalid("train and test input dimensions differ"));
        }
        if train.output_dim() != test.output_dim() {
            return Err(CoreError::invalid("train and test output dimensions differ"));
        }
        let gxx = GramMatrix::from_samples(train.x(), input_normalizer)?;
        let gxh = cross_gram(train.x(), test.x(), input_normalizer)?;
        let ghh = GramMatrix::from_samples(test.x(), input_normalizer)?;
        let n_d = train.output_dim();
        let gyy = GramMatrix::from_samples(train.y(), n_d)?;
        let gyh = cross_gram(train.y(), test.y(), n_d)?;
        let ghyhy = GramMatrix::from_samples(test.y(), n_d)?;
        Ok(Self { train, test, input_normalizer, gxx, gxh, ghh, gyy, gyh, ghyhy })
    }

    pub fn train(&self) -> &Dataset {
        &self.train
    }

    pub fn test(&self) -> &Dataset {
        &self.test
    }

    pub fn input_normalizer(&self) -> usize {
        self.input_normalizer
    }

    pub fn gxx(&self) -> &GramMatrix {
        &self.gxx
    }

    /// Cross input Gram `G_{x xhat}` (`p x p_hat`).
    pub fn gxh(&self) -> &Mat {
        &self.gxh
    }

    pub fn ghh(&self) -> &GramMatrix {
        &self.ghh
    }

    pub fn gyy(&self) -> &GramMatrix {
        &self.gyy
    }

    pub fn gyh(&self) -> &Mat {
        &self.gyh
    }

    pub fn ghyhy(&self) -> &GramMatrix {
        &self.ghyhy
    }
}

/// Mean predictor on the training and test inputs to `O(1/n)`.
#[derive(Debug, Clone)]
pub struct PredictorMean {
    /// `<F>` (`p x n_d`).
    pub train: Mat,
    /// `<F_hat>` (`p_hat x n_d`).
    pub test: Mat,
}

struct LinearBlocks {
    k_inf: Mat,
    r_hat: Mat,
    k_hat: Mat,
}

fn linear_blocks(ts: &TestSet, profile: &crate::gpkernels::WidthProfile) -> LinearBlocks {
    let m_sq = profile.m_sq(profile.depth() - 1);
    LinearBlocks {
        k_inf: ts.gxx.entries() * m_sq,
        r_hat: ts.gxh() * m_sq,
        k_hat: ts.ghh.entries() * m_sq,
    }
}

fn require_invertible(k: &Mat, what: &str) -> Result<()> {
    let ev = mat::sym_eigenvalues(k);
    let max = ev.last().copied().unwrap_or(0.0);
    let min = ev.first().copied().unwrap_or(0.0);
    if min <= 1e-12 * max.max(f64::MIN_POSITIVE) {
        return Err(CoreError::NeedsFiniteTemperature(format!(
            "{what} is singular (min eigenvalue {min:.3e})"
        )));
    }
    Ok(())
}

/// Mean predictor of a deep linear network:
/// `<F_hat> = R_hat^T [Gamma^-1 - (beta sigma_d^2)^-1 (sum 1/n_l) Gamma^-1 M Gamma^-1] Y`
/// with `M = Gamma^-1 K_inf + tr(Gamma^-1 K_inf) I - n_d Phi K_inf`. In the
/// zero-temperature limit the `O(1/n)` term is `O(1/beta)` and the mean
/// reduces to the kernel-ridge / least-norm form.
pub fn predictor_mean(
    ts: &TestSet,
    profile: &crate::gpkernels::WidthProfile,
    temp: &TemperatureParams,
) -> Result<PredictorMean> {
    let b = linear_blocks(ts, profile);
    let y = ts.train.y();
    let p = ts.train.len();
    match temp.finite_beta() {
        Some(beta) => {
            if beta == 0.0 {
                // Posterior = prior: the mean predictor vanishes.
                return Ok(PredictorMean {
                    train: Mat::zeros(p, y.ncols()),
                    test: Mat::zeros(ts.test.len(), y.ncols()),
                });
            }
            let sd2 = temp.sigma_d_sq();
            let gamma = &b.k_inf + Mat::identity(p, p) / (beta * sd2);
            let ginv = mat::spd_inverse(&gamma, "Gamma")?;
            let ginv_k = &ginv * &b.k_inf;
            let phi = mat::symmetrize(&(&ginv * ts.gyy.entries() * &ginv / sd2 - &ginv));
            let m = &ginv_k + Mat::identity(p, p) * ginv_k.trace()
                - (profile.output_width() as f64) * &phi * &b.k_inf;
            let wf = profile.inverse_width_sum(profile.depth() - 1)?;
            let bracket = &ginv - (wf / (beta * sd2)) * &ginv * m * &ginv;
            let apply = bracket * y;
            Ok(PredictorMean {
                train: b.k_inf.transpose() * &apply,
                test: b.r_hat.transpose() * &apply,
            })
        }
        None => {
            require_invertible(&b.k_inf, "K_inf")?;
            let kinv_y = mat::spd_solve(&b.k_inf, y, "K_inf")?;
            Ok(PredictorMean {
                train: b.k_inf.transpose() * &kinv_y,
                test: b.r_hat.transpose() * &kinv_y,
            })
        }
    }
}

/// GP-order mean predictor (kernel ridge form `R_hat^T Gamma^-1 Y`), without
/// the `O(1/n)` term.
pub fn predictor_mean_gp(
    ts: &TestSet,
    profile: &crate::gpkernels::WidthProfile,
    temp: &TemperatureParams,
) -> Result<PredictorMean> {
    let b = linear_blocks(ts, profile);
    let y = ts.train.y();
    let p = ts.train.len();
    let apply = match temp.finite_beta() {
        Some(beta) if beta > 0.0 => {
            let gamma = &b.k_inf + Mat::identity(p, p) / (beta * temp.sigma_d_sq());
            mat::spd_solve(&gamma, y, "Gamma")?
        }
        Some(_) => return Err(CoreError::invalid("GP mean needs beta > 0")),
        None => {
            require_invertible(&b.k_inf, "K_inf")?;
            mat::spd_solve(&b.k_inf, y, "K_inf")?
        }
    };
    Ok(PredictorMean { train: b.k_inf.transpose() * &apply, test: b.r_hat.transpose() * &apply })
}

/// Least-norm pseudoinverse predictor `Xhat X^T (X X^T)^+ Y`, the
/// zero-temperature reference point.
pub fn least_norm_predictor(ts: &TestSet) -> Result<Mat> {
    let xxt = ts.train.x() * ts.train.x().transpose();
    let pinv = pseudoinverse(&xxt, DEFAULT_PINV_TOL)?;
    Ok(ts.test.x() * ts.train.x().transpose() * pinv * ts.train.y())
}

/// Four-index predictor covariance `cov(F_{mu j}, F_{nu k})` stored as its
/// `(p n_d) x (p n_d)` flattening with row index `mu * n_d + j`.
#[derive(Debug, Clone)]
pub struct PredictorCovariance {
    points: usize,
    outputs: usize,
    m: Mat,
}

impl PredictorCovariance {
    pub fn points(&self) -> usize {
        self.points
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn flat(&self) -> &Mat {
        &self.m
    }

    pub fn get(&self, mu: usize, j: usize, nu: usize, k: usize) -> f64 {
        self.m[(mu * self.outputs + j, nu * self.outputs + k)]
    }

    /// `sum_{mu, k} cov(F_{mu k}, F_{mu k})`.
    pub fn total_variance(&self) -> f64 {
        self.m.trace()
    }
}

/// Predictor covariances on the training and test inputs to `O(1/n)`.
#[derive(Debug, Clone)]
pub struct PredictorCovariancePair {
    pub train: PredictorCovariance,
    pub test: PredictorCovariance,
}

/// Predictor covariance of a deep linear network to `O(1/n)`; the
/// infinite-width limit is the GP predictive covariance
/// `sigma_d^2 (K_hat - R_hat^T Gamma^-1 R_hat) delta_jk`.
pub fn predictor_covariance(
    ts: &TestSet,
    profile: &crate::gpkernels::WidthProfile,
    temp: &TemperatureParams,
) -> Result<PredictorCovariancePair> {
    let b = linear_blocks(ts, profile);
    let y = ts.train.y();
    let p = ts.train.len();
    let n_d = profile.output_width();
    let wf = profile.inverse_width_sum(profile.depth() - 1)?;
    let sd2 = temp.sigma_d_sq();

    match temp.finite_beta() {
        Some(beta) => {
            if beta == 0.0 {
                return Err(CoreError::invalid(
                    "predictor covariance at beta = 0 is the prior covariance; use the GP kernel directly",
                ));
            }
            let gamma = &b.k_inf + Mat::identity(p, p) / (beta * sd2);
            let ginv = mat::spd_inverse(&gamma, "Gamma")?;
            let ginv2 = &ginv * &ginv;
            let ginv3 = &ginv2 * &ginv;
            let phi = mat::symmetrize(&(&ginv * ts.gyy.entries() * &ginv / sd2 - &ginv));
            let tr_gk = (&ginv * &b.k_inf).trace();
            let y_gkg_y = y.transpose() * &ginv * &b.k_inf * &ginv * y;

            let build = |r_hat: &Mat, k_hat: &Mat| -> PredictorCovariance {
                let points = k_hat.nrows();
                let gp = k_hat - r_hat.transpose() * &ginv * r_hat;
                let r_g2_r = r_hat.transpose() * &ginv2 * r_hat;
                let r_g3_r = r_hat.transpose() * &ginv3 * r_hat;
                let r_gphig_r = r_hat.transpose() * &ginv * &phi * &ginv * r_hat;
                let y_g2_r = y.transpose() * &ginv2 * r_hat; // n_d x points
                let m_hat = -tr_gk * &gp + (tr_gk / (beta * sd2)) * &r_g2_r
                    - r_g3_r / (beta * beta * sd2 * sd2)
                    + (n_d as f64 / (beta * beta * sd2 * sd2)) * &r_gphig_r;
                let mut m = Mat::zeros(points * n_d, points * n_d);
                for mu in 0..points {
                    for j in 0..n_d {
                        for nu in 0..points {
                            for k in 0..n_d {
                                let mut v = 0.0;
                                if j == k {
                                    v += gp[(mu, nu)] + wf * m_hat[(mu, nu)];
                                }
                                v += wf
                                    * (y_gkg_y[(j, k)] / sd2 * gp[(mu, nu)]
                                        - y_gkg_y[(j, k)] / (beta * sd2 * sd2)
                                            * r_g2_r[(mu, nu)]
                                        + y_g2_r[(j, nu)] * y_g2_r[(k, mu)]
                                            / (beta * beta * sd2 * sd2 * sd2));
                                m[(mu * n_d + j, nu * n_d + k)] = sd2 * v;
                            }
                        }
                    }
                }
                PredictorCovariance { points, outputs: n_d, m }
            };

            Ok(PredictorCovariancePair {
                train: build(&b.k_inf.clone(), &b.k_inf),
                test: build(&b.r_hat, &b.k_hat),
            })
        }
        None => {
            require_invertible(&b.k_inf, "K_inf")?;
            let kinv = mat::spd_inverse(&b.k_inf, "K_inf")?;
            let y_kinv_y = y.transpose() * &kinv * y; // n_d x n_d
            let build = |r_hat: &Mat, k_hat: &Mat| -> PredictorCovariance {
                let points = k_hat.nrows();
                let gp = k_hat - r_hat.transpose() * &kinv * r_hat;
                let mut m = Mat::zeros(points * n_d, points * n_d);
                for mu in 0..points {
                    for j in 0..n_d {
                        for nu in 0..points {
                            for k in 0..n_d {
                                let mut bracket = if j == k { 1.0 } else { 0.0 };
                                bracket += wf
                                    * (y_kinv_y[(j, k)] / sd2
                                        - if j == k { p as f64 } else { 0.0 });
                                m[(mu * n_d + j, nu * n_d + k)] = sd2 * gp[(mu, nu)] * bracket;
                            }
                        }
                    }
                }
                PredictorCovariance { points, outputs: n_d, m }
            };
            let zero_train = PredictorCovariance {
                points: p,
                outputs: n_d,
                m: Mat::zeros(p * n_d, p * n_d),
            };
            Ok(PredictorCovariancePair { train: zero_train, test: build(&b.r_hat, &b.k_hat) })
        }
    }
}

/// Thermal bias–variance split of the mean energy on one dataset:
/// `E_b = (1/2) sum ||<f> - y||^2`, `E_v = (1/2) sum_mu sum_k var(f_k(x_mu))`,
/// `<E> = E_b + E_v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasVariance {
    pub bias: f64,
    pub variance: f64,
}

impl BiasVariance {
    pub fn total(&self) -> f64 {
        self.bias + self.variance
    }
}

pub fn bias_variance(mean: &Mat, cov: &PredictorCovariance, targets: &Mat) -> Result<BiasVariance> {
    if mean.shape() != targets.shape() {
        return Err(CoreError::invalid("mean and targets must have matching shapes"));
    }
    if cov.points() != mean.nrows() || cov.outputs() != mean.ncols() {
        return Err(CoreError::invalid("covariance shape must match the mean predictor"));
    }
    let d = mean - targets;
    let bias = 0.5 * {
        let n = mat::frobenius(&d);
        n * n
    };
    Ok(BiasVariance { bias, variance: 0.5 * cov.total_variance() })
}

/// Verdict of the leading-order width-benefit condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WidthBenefit {
    /// Test error decreases with increasing width.
    Improves,
    Worsens,
    /// Within the 1e-12 band of the threshold.
    Marginal,
}

/// Leading-order low-temperature condition for width to help generalization:
/// improves iff `tr(G_xx^-1 G_yy)/p > sigma_1^2 ... sigma_d^2`.
pub fn width_benefit_condition(
    gxx: &GramMatrix,
    gyy: &GramMatrix,
    profile: &crate::gpkernels::WidthProfile,
) -> Result<WidthBenefit> {
    require_invertible(gxx.entries(), "G_xx")
        .map_err(|_| CoreError::invalid("G_xx must be invertible"))?;
    let p = gxx.dim() as f64;
    let lhs = mat::spd_solve(gxx.entries(), gyy.entries(), "G_xx")?.trace() / p;
    let rhs = profile.m_sq(profile.depth());
    let band = 1e-12 * lhs.abs().max(rhs.abs()).max(1.0);
    Ok(if lhs > rhs + band {
        WidthBenefit::Improves
    } else if lhs < rhs - band {
        WidthBenefit::Worsens
    } else {
        WidthBenefit::Marginal
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeanRegime {
    Zero,
    Ridge,
    Interpolant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceRegime {
    Zero,
    Finite,
    Divergent,
}

/// Zero-temperature behavior of the predictor under the generalized
/// prior-decay schedule `lambda(beta) = beta^omega`: the mean is classified
/// by `omega` against `1/d - 1` and the test variance by `omega` against
/// `-1`.
pub fn regularization_regime(omega: f64, depth: usize) -> Result<(MeanRegime, VarianceRegime)> {
    if depth == 0 {
        return Err(CoreError::invalid("depth must be >= 1"));
    }
    let mean_threshold = 1.0 / depth as f64 - 1.0;
    let band = 1e-12;
    let mean = if omega > mean_threshold + band {
        MeanRegime::Zero
    } else if omega < mean_threshold - band {
        MeanRegime::Interpolant
    } else {
        MeanRegime::Ridge
    };
    let variance = if omega > -1.0 + band {
        VarianceRegime::Zero
    } else if omega < -1.0 - band {
        VarianceRegime::Divergent
    } else {
        VarianceRegime::Finite
    };
    Ok((mean, variance))
}

/// Solution of the implicit zero-temperature kernel recurrence.
#[derive(Debug, Clone)]
pub struct ImplicitKernelSolution {
    /// `K^(1) .. K^(d-1)`.
    pub kernels: Vec<Mat>,
    /// Max Frobenius norm over layers of the recurrence evaluated at the
    /// solution, normalized by `n_{l+1}` (the raw terms scale like the
    /// widths, so the normalized form is what 1e-10 is measured against).
    pub residual: f64,
    pub iterations: usize,
}

/// Damped fixed-point solve of the implicit zero-temperature recurrence
/// `0 = -(n_{l+1} - n_l) (K^(l))^-1 + n_{l+1} (K^(l))^-1 K^(l+1) (K^(l))^-1
///     - n_l (K^(l-1))^-1`
/// with boundaries `K^(0) = G_xx`, `K^(d) = G_yy`, initialized at the
/// first-order interpolation prediction (the recurrence admits spurious
/// branches; the perturbative prediction selects the physical one).
pub fn solve_implicit_kernel_recurrence(
    gxx: &GramMatrix,
    gyy: &GramMatrix,
    hidden_widths: &[usize],
    output_width: usize,
    tol: f64,
    max_iterations: usize,
) -> Result<ImplicitKernelSolution> {
    require_invertible(gxx.entries(), "G_xx").map_err(|_| CoreError::invalid("G_xx singular"))?;
    require_invertible(gyy.entries(), "G_yy").map_err(|_| CoreError::invalid("G_yy singular"))?;
    if hidden_widths.is_empty() || hidden_widths.contains(&0) || output_width == 0 {
        return Err(CoreError::invalid("widths must be positive"));
    }
    let d = hidden_widths.len() + 1;
    let p = gxx.dim();
    let width = |l: usize| -> f64 {
        if l == d {
            output_width as f64
        } else {
            hidden_widths[l - 1] as f64
        }
    };

    // Initialize at K^(l) = G_xx + (sum_{l'<=l} n_d/n_l') (G_yy - G_xx).
    let mut kernels: Vec<Mat> = Vec::with_capacity(d - 1);
    let mut inv_sum = 0.0;
    for l in 1..d {
        inv_sum += 1.0 / width(l);
        let wf = output_width as f64 * inv_sum;
        kernels.push(gxx.entries() + wf * (gyy.entries() - gxx.entries()));
    }

    let damping = 0.5;
    let boundary_lo = gxx.entries().clone();
    let boundary_hi = gyy.entries().clone();
    let kernel_at = |kernels: &[Mat], l: usize| -> Mat {
        if l == 0 {
            boundary_lo.clone()
        } else if l == d {
            boundary_hi.clone()
        } else {
            kernels[l - 1].clone()
        }
    };

    let mut residual = f64::INFINITY;
    for it in 0..max_iterations {
        // Gauss-Seidel sweep: solve each centered equation for its middle
        // kernel. With P = n_l (K^(l-1))^-1, c = n_{l+1} - n_l,
        // Q = n_{l+1} K^(l+1), the equation K P K + c K = Q has the PSD
        // solution K = P^-1/2 X P^-1/2, X = -c/2 + sqrt(c^2/4 + Q~),
        // Q~ = P^1/2 Q P^1/2.
        for l in 1..d {
            let prev = kernel_at(&kernels, l - 1);
            let next = kernel_at(&kernels, l + 1);
            let p_mat = width(l) * mat::spd_inverse(&prev, "K^(l-1)")?;
            let c = width(l + 1) - width(l);
            let q = width(l + 1) * next;
            let p_half = mat::sym_sqrt(&p_mat);
            let p_half_inv = mat::spd_inverse(&p_half, "P^(1/2)")?;
            let q_tilde = mat::symmetrize(&(&p_half * q * &p_half));
            // X = -c/2 I + (c^2/4 I + Q~)^(1/2)
            let spec = eigendecompose(&q_tilde)?;
            let mut x = Mat::zeros(p, p);
            for k in 0..p {
                let lam = spec.eigenvalues()[k];
                let xs = -0.5 * c + libm::sqrt((0.25 * c * c + lam).max(0.0));
                let u = spec.eigenvectors().column(k);
                for i in 0..p {
                    for j in 0..p {
                        x[(i, j)] += xs * u[i] * u[j];
                    }
                }
            }
            let solved = mat::symmetrize(&(&p_half_inv * x * &p_half_inv));
            kernels[l - 1] = &kernels[l - 1] * (1.0 - damping) + solved * damping;
        }

        residual = recurrence_residual(&kernels, &kernel_at, &width, d);
        if residual <= tol {
            return Ok(ImplicitKernelSolution { kernels, residual, iterations: it + 1 });
        }
    }
    Err(CoreError::ConvergenceFailure { iterations: max_iterations, residual })
}

fn recurrence_residual(
    kernels: &[Mat],
    kernel_at: &impl Fn(&[Mat], usize) -> Mat,
    width: &impl Fn(usize) -> f64,
    d: usize,
) -> f64 {
    let mut worst = 0.0f64;
    for l in 1..d {
        let prev = kernel_at(kernels, l - 1);
        let mid = kernel_at(kernels, l);
        let next = kernel_at(kernels, l + 1);
        let mid_inv = match mat::spd_inverse(&mid, "K") {
            Ok(m) => m,
            Err(_) => return f64::INFINITY,
        };
        let prev_inv = match mat::spd_inverse(&prev, "K") {
            Ok(m) => m,
            Err(_) => return f64::INFINITY,
        };
        let r = -(width(l + 1) - width(l)) * &mid_inv + width(l + 1) * &mid_inv * next * &mid_inv
            - width(l) * prev_inv;
        worst = worst.max(mat::frobenius(&r) / width(l + 1));
    }
    worst
}

/// Equal-width kernel prediction in the proportional regime where the
/// dataset size scales with the width (`alpha = p/n`), normalized by
/// `sigma^(2(l+1))`.
#[derive(Debug, Clone)]
pub struct ProportionalKernel {
    /// Width-normalized kernel prediction at the requested layer.
    pub normalized: Mat,
    /// Roots `z_k`, one per retained target-spectrum eigenvalue.
    pub roots: Vec<f64>,
    /// Eigenvalues `omega_k` of `R = Y^T G_xx^+ Y / (sigma^2 p)`.
    pub omegas: Vec<f64>,
    /// Largest absolute residual of the defining equations at the roots.
    pub root_residual: f64,
}

/// Consistency prediction from the proportional-regime theory: per
/// eigenvalue `omega_k` of `R`, solve
/// `1 - alpha = z - alpha sigma^(-2(d-1)) z^(-(d-1)) omega_k` for `z_k > 0`
/// (bracketed bisection plus Newton polish), then assemble
/// `(1 - n_d/n)^l G_xx + (1/n) sigma^(-2d) Y V M_l V^T Y^T` with
/// `[M_l]_kk = z_k^(-(d-1)) (z_k^l - 1)/(z_k - 1)`.
///
/// `G_yy` enters only through `Y Y^T = n_d G_yy`, so any factor of it gives
/// identical results; an eigenvalue square root is used internally.
#[allow(clippy::too_many_arguments)]
pub fn proportional_regime_kernel(
    gxx: &GramMatrix,
    gyy: &GramMatrix,
    sigma_sq: f64,
    depth: usize,
    alpha: f64,
    hidden_width: usize,
    output_width: usize,
    layer: usize,
) -> Result<ProportionalKernel> {
    if !(alpha > 0.0) {
        return Err(CoreError::invalid("alpha must be positive"));
    }
    if depth < 2 || layer == 0 || layer >= depth {
        return Err(CoreError::invalid("need depth >= 2 and 1 <= layer < depth"));
    }
    if !(sigma_sq > 0.0) {
        return Err(CoreError::invalid("sigma_sq must be positive"));
    }
    let p = gxx.dim();
    let n = hidden_width as f64;
    let n_d = output_width as f64;
    let dm1 = (depth - 1) as i32;

    // Factor n_d G_yy = Y~ Y~^T.
    let y_factor = mat::psd_factor(&(output_width as f64 * gyy.entries()), 1e-12);
    let gxx_pinv = pseudoinverse(gxx.entries(), DEFAULT_PINV_TOL)?;
    let r = mat::symmetrize(
        &(y_factor.transpose() * &gxx_pinv * &y_factor / (sigma_sq * p as f64)),
    );
    let spec = eigendecompose(&r)?;
    let omegas: Vec<f64> = spec.eigenvalues().iter().map(|&w| w.max(0.0)).collect();

    let spow = libm::pow(sigma_sq, -(dm1 as f64)); // sigma^(-2(d-1))
    let defining = |z: f64, omega: f64| -> f64 {
        z - alpha * spow * libm::pow(z, -(dm1 as f64)) * omega - (1.0 - alpha)
    };
    let max_omega = omegas.iter().cloned().fold(0.0f64, f64::max);
    let hi = 1.0 + alpha * (spow * max_omega) + 1.0;
    let mut roots = Vec::with_capacity(omegas.len());
    let mut root_residual = 0.0f64;
    for &omega in &omegas {
        let mut lo = 1e-6;
        let mut hb = hi;
        if defining(lo, omega) > 0.0 || defining(hb, omega) < 0.0 {
            return Err(CoreError::ConvergenceFailure { iterations: 0, residual: f64::INFINITY });
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hb);
            if defining(mid, omega) < 0.0 {
                lo = mid;
            } else {
                hb = mid;
            }
        }
        let mut z = 0.5 * (lo + hb);
        // Newton polish; the defining function is strictly increasing in z.
        for _ in 0..8 {
            let f = defining(z, omega);
            let df = 1.0 + alpha * spow * dm1 as f64 * libm::pow(z, -(dm1 as f64) - 1.0) * omega;
            z -= f / df;
        }
        root_residual = root_residual.max(defining(z, omega).abs());
        roots.push(z);
    }

    // M_l in the eigenbasis of R.
    let mut m_diag = Vec::with_capacity(roots.len());
    for &z in &roots {
        let geom = if (z - 1.0).abs() < 1e-9 {
            // (z^l - 1)/(z - 1) -> l (1 + (l-1)(z-1)/2) near z = 1.
            layer as f64 * (1.0 + (layer as f64 - 1.0) * (z - 1.0) / 2.0)
        } else {
            (libm::pow(z, layer as f64) - 1.0) / (z - 1.0)
        };
        m_diag.push(libm::pow(z, -(dm1 as f64)) * geom);
    }
    let v = spec.eigenvectors();
    let mut m_mat = Mat::zeros(roots.len(), roots.len());
    for (k, &mv) in m_diag.iter().enumerate() {
        m_mat[(k, k)] = mv;
    }
    let yvmvy = &y_factor * v * m_mat * v.transpose() * y_factor.transpose();

    let gp_scale = libm::pow(1.0 - n_d / n, layer as f64);
    let normalized =
        gxx.entries() * gp_scale + yvmvy * (libm::pow(sigma_sq, -(depth as f64)) / n);
    Ok(ProportionalKernel { normalized, roots, omegas, root_residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gpkernels::WidthProfile;

    #[test]
    fn width_benefit_trace_identity() {
        // G_yy = c G_xx with unit variances: improves iff c > 1.
        let gxx = GramMatrix::new(Mat::identity(3, 3), 1).unwrap();
        let profile = WidthProfile::uniform(3, 16, 2).unwrap();
        for (c, want) in [
            (1.5, WidthBenefit::Improves),
            (0.5, WidthBenefit::Worsens),
            (1.0, WidthBenefit::Marginal),
        ] {
            let gyy = GramMatrix::new(c * Mat::identity(3, 3), 1).unwrap();
            assert_eq!(width_benefit_condition(&gxx, &gyy, &profile).unwrap(), want);
        }
    }

    #[test]
    fn regime_classification_cases() {
        assert_eq!(
            regularization_regime(-1.0, 3).unwrap(),
            (MeanRegime::Interpolant, VarianceRegime::Finite)
        );
        assert_eq!(
            regularization_regime(0.0, 2).unwrap(),
            (MeanRegime::Zero, VarianceRegime::Zero)
        );
        let d = 4usize;
        let omega = 1.0 / d as f64 - 1.0;
        assert_eq!(
            regularization_regime(omega, d).unwrap(),
            (MeanRegime::Ridge, VarianceRegime::Zero)
        );
    }

    #[test]
    fn implicit_recurrence_homogeneous_fixed_point() {
        let g = GramMatrix::new(
            Mat::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.8]),
            1,
        )
        .unwrap();
        let sol =
            solve_implicit_kernel_recurrence(&g, &g, &[100, 100], 2, 1e-10, 10_000).unwrap();
        for k in &sol.kernels {
            assert!(mat::frobenius(&(k - g.entries())) < 1e-9);
        }
        assert!(sol.residual <= 1e-10);
    }

    #[test]
    fn proportional_regime_exact_root() {
        // omega_k = sigma^(2(d-1)) makes z = 1 an exact root for any alpha.
        let d = 3usize;
        let sigma_sq: f64 = 1.3;
        let omega = libm::pow(sigma_sq, (d - 1) as f64);
        let alpha = 0.37;
        let spow = libm::pow(sigma_sq, -((d - 1) as f64));
        let f = 1.0 - alpha * spow * omega - (1.0 - alpha);
        assert!(f.abs() < 1e-15);
    }
}
