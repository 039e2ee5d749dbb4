//! Exact-readout importance-sampling oracle.
//!
//! The linear readout integrates out analytically, leaving a per-draw weight
//! `w = exp[-(n_d/2) (beta tr((I + beta sigma_d^2 K)^-1 G_yy)
//!                    + log det(I + beta sigma_d^2 K))]`
//! on prior draws of the hidden features, where `K` is the empirical readout
//! kernel on the training set. Posterior means of hidden-layer observables
//! are the self-normalized weighted averages; predictor statistics use the
//! readout-marginalized conditional mean and covariance, which removes the
//! readout noise from the estimator entirely.

use super::features::{antithetic_recommended, draw_features};
use super::{Architecture, CnnReadout, Dataset, NetworkConfig};
use crate::corrections::TemperatureParams;
use crate::error::{CoreError, Result};
use crate::mat::{self, Mat};
use crate::rng::stream_rng;
use alloc::vec::Vec;

#[derive(Debug, Clone)]
pub struct ImportanceOptions {
    /// Independent batches for standard errors.
    pub batches: usize,
    /// Antithetic pairing; `None` enables it only where it is not a no-op.
    pub antithetic: Option<bool>,
    /// Also accumulate the posterior second moments of each layer kernel.
    pub kernel_second_moments: bool,
    /// Collect predictor statistics on the test set passed to
    /// [`importance_oracle`].
    pub predictor: bool,
    /// Also accumulate the posterior predictor covariance.
    pub predictor_covariance: bool,
    /// Collect the posterior mean predictor on the training inputs.
    pub train_predictor: bool,
}

impl Default for ImportanceOptions {
    fn default() -> Self {
        Self {
            batches: 32,
            antithetic: None,
            kernel_second_moments: false,
            predictor: false,
            predictor_covariance: false,
            train_predictor: false,
        }
    }
}

/// Self-normalized importance estimates with effective-sample-size
/// diagnostics.
#[derive(Debug, Clone)]
pub struct ImportanceEstimate {
    pub n_draws: usize,
    /// `(sum w)^2 / sum w^2`.
    pub ess: f64,
    /// Set when `ess < 100`; estimates are then unreliable.
    pub unreliable: bool,
    pub kernel_mean: Vec<Mat>,
    pub kernel_se: Vec<Mat>,
    /// Posterior covariance of kernel entries per layer (`c^2 x c^2`,
    /// row-major entry pairs) with its standard error.
    pub kernel_posterior_cov: Option<Vec<(Mat, Mat)>>,
    /// Posterior mean predictor on the test set (`p_hat x n_d`).
    pub predictor_mean: Option<Mat>,
    pub predictor_se: Option<Mat>,
    /// Posterior predictor covariance `cov(F_{mu j}, F_{nu k})` flattened to
    /// `(p_hat n_d) x (p_hat n_d)` with row index `mu * n_d + j`, plus SE.
    pub predictor_cov: Option<(Mat, Mat)>,
    /// Posterior mean predictor on the training inputs (`p x n_d`).
    pub train_predictor_mean: Option<Mat>,
    pub train_predictor_se: Option<Mat>,
}

struct BatchAccum {
    max_lw: f64,
    sum_w: f64,
    sum_w2: f64,
    sums: Vec<Mat>, // weighted observable sums, in units of exp(lw - max_lw)
}

impl BatchAccum {
    fn new(shapes: &[(usize, usize)]) -> Self {
        Self {
            max_lw: f64::NEG_INFINITY,
            sum_w: 0.0,
            sum_w2: 0.0,
            sums: shapes.iter().map(|&(r, c)| Mat::zeros(r, c)).collect(),
        }
    }

    fn add(&mut self, lw: f64, obs: &[Mat]) {
        if lw > self.max_lw {
            if self.max_lw.is_finite() {
                let f = libm::exp(self.max_lw - lw);
                self.sum_w *= f;
                self.sum_w2 *= f * f;
                for s in &mut self.sums {
                    *s *= f;
                }
            }
            self.max_lw = lw;
        }
        let w = libm::exp(lw - self.max_lw);
        self.sum_w += w;
        self.sum_w2 += w * w;
        for (s, o) in self.sums.iter_mut().zip(obs) {
            *s += o * w;
        }
    }

    fn means(&self) -> Vec<Mat> {
        self.sums.iter().map(|s| s / self.sum_w).collect()
    }
}

/// Posterior means of hidden-layer observables by self-normalized importance
/// sampling over `n_draws` prior draws. Deterministic given
/// `(seed, n_draws)`; an effective sample size below 100 sets the
/// `unreliable` flag on the output (estimates are still returned).
pub fn importance_oracle(
    config: &NetworkConfig,
    train: &Dataset,
    temp: &TemperatureParams,
    n_draws: usize,
    seed: u64,
    opts: &ImportanceOptions,
    test: Option<&Dataset>,
) -> Result<ImportanceEstimate> {
    let beta = temp.finite_beta().ok_or_else(|| {
        CoreError::NeedsFiniteTemperature("importance sampling needs finite beta".into())
    })?;
    if n_draws == 0 {
        return Err(CoreError::invalid("need at least one draw"));
    }
    if opts.batches < 2 || n_draws < 2 * opts.batches {
        return Err(CoreError::invalid("need at least two draws per batch"));
    }
    if (opts.predictor || opts.predictor_covariance) && test.is_none() {
        return Err(CoreError::invalid("predictor statistics need a test set"));
    }
    let p = train.len();
    let n_d = config.profile().output_width();
    if train.output_dim() != n_d {
        return Err(CoreError::invalid("training targets must match the readout width"));
    }
    let gyy = train.gyy()?.into_entries();
    let y = train.y().clone();
    let p_hat = test.map(|t| t.len()).unwrap_or(0);

    // Stacked inputs: train rows first, then test rows.
    let x_all = match test {
        Some(t) => {
            if t.input_dim() != train.input_dim() {
                return Err(CoreError::invalid("train and test input dimensions differ"));
            }
            let mut m = Mat::zeros(p + p_hat, train.input_dim());
            m.view_mut((0, 0), (p, train.input_dim())).copy_from(train.x());
            m.view_mut((p, 0), (p_hat, train.input_dim())).copy_from(t.x());
            m
        }
        None => train.x().clone(),
    };

    let antithetic = opts.antithetic.unwrap_or_else(|| antithetic_recommended(config));
    let s = config.sites();
    let c_train = p * s;

    // Observable layout: per-layer kernels, then optional extras.
    let layers = config.depth() - 1;
    let mut shapes: Vec<(usize, usize)> = Vec::new();
    for _ in 0..layers {
        shapes.push((c_train, c_train));
    }
    let second_base = shapes.len();
    if opts.kernel_second_moments {
        for _ in 0..layers {
            shapes.push((c_train * c_train, c_train * c_train));
        }
    }
    let pred_base = shapes.len();
    if opts.predictor {
        shapes.push((p_hat, n_d)); // conditional mean
    }
    let pred_second_base = shapes.len();
    if opts.predictor_covariance {
        shapes.push((p_hat * n_d, p_hat * n_d)); // cond-mean second moment
        shapes.push((p_hat, p_hat)); // conditional covariance (per output)
    }
    let train_pred_base = shapes.len();
    if opts.train_predictor {
        shapes.push((p, n_d));
    }

    let batches = opts.batches;
    let mut accs: Vec<BatchAccum> = (0..batches).map(|_| BatchAccum::new(&shapes)).collect();

    let mut obs: Vec<Mat> = shapes.iter().map(|&(r, c)| Mat::zeros(r, c)).collect();
    let mut draw_index = 0usize;
    for (b, acc) in accs.iter_mut().enumerate() {
        let quota = n_draws / batches + usize::from(b < n_draws % batches);
        let mut done = 0usize;
        while done < quota {
            let rng = stream_rng(seed, draw_index as u64);
            draw_index += 1;
            let flips: &[bool] =
                if antithetic && quota - done >= 2 { &[false, true] } else { &[false] };
            for &flip in flips {
                let mut rng_use = rng.clone();
                let draw = draw_features(config, &x_all, &mut rng_use, flip)?;

                // Readout kernel on all stacked samples.
                let last = draw.activations.last().expect("at least one hidden layer");
                let k_full = readout_kernel_from_activation(config, last, p + p_hat);

                let k_train = k_full.view((0, 0), (p, p)).into_owned();
                let s_mat = Mat::identity(p, p) + beta * temp.sigma_d_sq() * &k_train;
                let chol = mat::symmetrize(&s_mat)
                    .cholesky()
                    .ok_or_else(|| CoreError::SingularMatrix("I + beta sigma^2 K".into()))?;
                let logdet = 2.0 * (0..p).map(|i| libm::log(chol.l_dirty()[(i, i)])).sum::<f64>();
                let tr = (chol.solve(&gyy)).trace();
                let lw = -(n_d as f64 / 2.0) * (beta * tr + logdet);

                // Layer kernels restricted to the training block.
                for (l, a) in draw.activations.iter().enumerate() {
                    let n_l = a.nrows() as f64;
                    let a_train = a.view((0, 0), (a.nrows(), c_train));
                    obs[l] = mat::symmetrize(&((a_train.transpose() * a_train) / n_l));
                }
                if opts.kernel_second_moments {
                    for l in 0..layers {
                        let k = &obs[l];
                        let mut sq = Mat::zeros(c_train * c_train, c_train * c_train);
                        for i in 0..c_train {
                            for j in 0..c_train {
                                for r2 in 0..c_train {
                                    for c2 in 0..c_train {
                                        sq[(i * c_train + j, r2 * c_train + c2)] =
                                            k[(i, j)] * k[(r2, c2)];
                                    }
                                }
                            }
                        }
                        obs[second_base + l] = sq;
                    }
                }
                if opts.predictor || opts.predictor_covariance || opts.train_predictor {
                    let bs2 = beta * temp.sigma_d_sq();
                    let solve_y = chol.solve(&y); // (I + bs2 K)^-1 Y
                    if opts.predictor {
                        let k_cross = k_full.view((p, 0), (p_hat, p)).into_owned();
                        let cond_mean = bs2 * &k_cross * &solve_y;
                        if opts.predictor_covariance {
                            let k_test = k_full.view((p, p), (p_hat, p_hat)).into_owned();
                            let cond_cov = temp.sigma_d_sq()
                                * (&k_test
                                    - bs2 * &k_cross * chol.solve(&k_cross.transpose()));
                            let mut mm = Mat::zeros(p_hat * n_d, p_hat * n_d);
                            for mu in 0..p_hat {
                                for j in 0..n_d {
                                    for nu in 0..p_hat {
                                        for k2 in 0..n_d {
                                            mm[(mu * n_d + j, nu * n_d + k2)] =
                                                cond_mean[(mu, j)] * cond_mean[(nu, k2)];
                                        }
                                    }
                                }
                            }
                            obs[pred_second_base] = mm;
                            obs[pred_second_base + 1] = mat::symmetrize(&cond_cov);
                        }
                        obs[pred_base] = cond_mean;
                    }
                    if opts.train_predictor {
                        let cond_mean_train = bs2 * &k_train * &solve_y;
                        obs[train_pred_base] = cond_mean_train;
                    }
                }

                acc.add(lw, &obs);
                done += 1;
                if done >= quota {
                    break;
                }
            }
        }
    }

    // Global self-normalized estimate from the batch sums.
    let global_max = accs.iter().map(|a| a.max_lw).fold(f64::NEG_INFINITY, f64::max);
    let mut sum_w = 0.0;
    let mut sum_w2 = 0.0;
    let mut sums: Vec<Mat> = shapes.iter().map(|&(r, c)| Mat::zeros(r, c)).collect();
    for a in &accs {
        let f = libm::exp(a.max_lw - global_max);
        sum_w += a.sum_w * f;
        sum_w2 += a.sum_w2 * f * f;
        for (s_tot, s_b) in sums.iter_mut().zip(&a.sums) {
            *s_tot += s_b * f;
        }
    }
    let means: Vec<Mat> = sums.iter().map(|s| s / sum_w).collect();
    let ess = sum_w * sum_w / sum_w2;

    // SEs from the spread of per-batch self-normalized estimates.
    let batch_means: Vec<Vec<Mat>> = accs.iter().map(|a| a.means()).collect();
    let ses: Vec<Mat> = (0..shapes.len())
        .map(|i| {
            let mut var = Mat::zeros(shapes[i].0, shapes[i].1);
            for bm in &batch_means {
                let d = &bm[i] - &means[i];
                var += d.component_mul(&d);
            }
            var /= (batches - 1) as f64 * batches as f64;
            var.map(libm::sqrt)
        })
        .collect();

    let kernel_mean = means[..layers].to_vec();
    let kernel_se = ses[..layers].to_vec();

    let kernel_posterior_cov = if opts.kernel_second_moments {
        let mut out = Vec::with_capacity(layers);
        for l in 0..layers {
            let mean_k = &kernel_mean[l];
            let outer = outer_flat(mean_k);
            let cov = &means[second_base + l] - outer;
            // SEs of second moment and mean combine in quadrature through
            // the outer-product term.
            let mut se = ses[second_base + l].clone();
            for i in 0..c_train * c_train {
                for j in 0..c_train * c_train {
                    let (r1, c1) = (i / c_train, i % c_train);
                    let (r2, c2) = (j / c_train, j % c_train);
                    let t = kernel_se[l][(r1, c1)] * mean_k[(r2, c2)].abs()
                        + mean_k[(r1, c1)].abs() * kernel_se[l][(r2, c2)];
                    se[(i, j)] = libm::hypot(se[(i, j)], t);
                }
            }
            out.push((cov, se));
        }
        Some(out)
    } else {
        None
    };

    let (predictor_mean, predictor_se) = if opts.predictor {
        (Some(means[pred_base].clone()), Some(ses[pred_base].clone()))
    } else {
        (None, None)
    };

    let predictor_cov = if opts.predictor_covariance {
        let m = &means[pred_base];
        let mm = &means[pred_second_base];
        let cc = &means[pred_second_base + 1];
        let mut cov = Mat::zeros(p_hat * n_d, p_hat * n_d);
        for mu in 0..p_hat {
            for j in 0..n_d {
                for nu in 0..p_hat {
                    for k2 in 0..n_d {
                        let mut v = mm[(mu * n_d + j, nu * n_d + k2)] - m[(mu, j)] * m[(nu, k2)];
                        if j == k2 {
                            v += cc[(mu, nu)];
                        }
                        cov[(mu * n_d + j, nu * n_d + k2)] = v;
                    }
                }
            }
        }
        // Combined SE: second-moment spread plus conditional-covariance
        // spread plus the mean outer-product propagation.
        let mut se = Mat::zeros(p_hat * n_d, p_hat * n_d);
        for mu in 0..p_hat {
            for j in 0..n_d {
                for nu in 0..p_hat {
                    for k2 in 0..n_d {
                        let mut v = ses[pred_second_base][(mu * n_d + j, nu * n_d + k2)];
                        if j == k2 {
                            v = libm::hypot(v, ses[pred_second_base + 1][(mu, nu)]);
                        }
                        let t = ses[pred_base][(mu, j)] * m[(nu, k2)].abs()
                            + m[(mu, j)].abs() * ses[pred_base][(nu, k2)];
                        se[(mu * n_d + j, nu * n_d + k2)] = libm::hypot(v, t);
                    }
                }
            }
        }
        Some((cov, se))
    } else {
        None
    };

    let (train_predictor_mean, train_predictor_se) = if opts.train_predictor {
        (Some(means[train_pred_base].clone()), Some(ses[train_pred_base].clone()))
    } else {
        (None, None)
    };

    Ok(ImportanceEstimate {
        n_draws,
        ess,
        unreliable: ess < 100.0,
        kernel_mean,
        kernel_se,
        kernel_posterior_cov,
        predictor_mean,
        predictor_se,
        predictor_cov,
        train_predictor_mean,
        train_predictor_se,
    })
}

/// Readout-layer feature kernel over stacked samples from the last hidden
/// activation: plain `(A^T A)/n` for MLPs, the spatial-diagonal average for
/// CNN vectorization, pooled features for global average pooling.
fn readout_kernel_from_activation(config: &NetworkConfig, last: &Mat, n_samples: usize) -> Mat {
    match config.arch() {
        Architecture::CnnLinear { spatial } => {
            let s = spatial.size();
            let n = last.nrows();
            match config.readout() {
                CnnReadout::Vectorization => {
                    let mut k = Mat::zeros(n_samples, n_samples);
                    for i in 0..n_samples {
                        for j in i..n_samples {
                            let mut acc = 0.0;
                            for ch in 0..n {
                                for a in 0..s {
                                    acc += last[(ch, i * s + a)] * last[(ch, j * s + a)];
                                }
                            }
                            let v = acc / (n * s) as f64;
                            k[(i, j)] = v;
                            k[(j, i)] = v;
                        }
                    }
                    k
                }
                CnnReadout::GlobalAveragePooling => {
                    let mut pooled = Mat::zeros(n, n_samples);
                    for ch in 0..n {
                        for i in 0..n_samples {
                            let mut acc = 0.0;
                            for a in 0..s {
                                acc += last[(ch, i * s + a)];
                            }
                            pooled[(ch, i)] = acc / s as f64;
                        }
                    }
                    mat::symmetrize(&((pooled.transpose() * pooled) / n as f64))
                }
            }
        }
        _ => {
            let n = last.nrows() as f64;
            mat::symmetrize(&((last.transpose() * last) / n))
        }
    }
}

fn outer_flat(m: &Mat) -> Mat {
    let (r, c) = m.shape();
    let mut out = Mat::zeros(r * c, r * c);
    for i in 0..r {
        for j in 0..c {
            for k in 0..r {
                for l in 0..c {
                    out[(i * c + j, k * c + l)] = m[(i, j)] * m[(k, l)];
                }
            }
        }
    }
    out
}
