//! Monte-Carlo ground truth for the prior kernel statistics.

use crate::error::{CoreError, Result};
use crate::mat::{self, Mat};
use crate::rng::stream_rng;
use crate::sampler::{
    antithetic_recommended, draw_features, kernels_from_activations, NetworkConfig,
};
use alloc::format;
use alloc::vec::Vec;

#[derive(Debug, Clone)]
pub struct PriorOracleOptions {
    /// Independent batches used for standard errors.
    pub batches: usize,
    /// Also accumulate the covariance between all stacked kernel entries
    /// (memory grows with the fourth power of `p*s`).
    pub collect_covariance: bool,
    /// Antithetic pairing of the underlying Gaussians. `None` selects it
    /// automatically: pairing is a no-op for kernels that are even in the
    /// feature signs (all linear architectures and even/odd activations), so
    /// it is enabled only when the activation is neither even nor odd.
    pub antithetic: Option<bool>,
}

impl Default for PriorOracleOptions {
    fn default() -> Self {
        Self { batches: 64, collect_covariance: false, antithetic: None }
    }
}

/// Empirical mean (and optionally covariance) of all hidden-layer kernels
/// under the prior, with per-entry standard errors from independent batches.
#[derive(Debug, Clone)]
pub struct PriorKernelStats {
    pub n_draws: usize,
    /// Flattened kernel side length per hidden layer (`p` or `p*s`).
    pub layer_dims: Vec<usize>,
    pub mean: Vec<Mat>,
    pub mean_se: Vec<Mat>,
    pub covariance: Option<KernelCovarianceStats>,
}

/// Covariance between every pair of stacked kernel entries; the stacked
/// vector lists each layer's flattened kernel (row-major) in layer order.
#[derive(Debug, Clone)]
pub struct KernelCovarianceStats {
    layer_dims: Vec<usize>,
    offsets: Vec<usize>,
    pub cov: Mat,
    pub se: Mat,
}

impl KernelCovarianceStats {
    /// Covariance of `K^(layer_i)[a_i]` with `K^(layer_j)[b_j]` where the
    /// entries are addressed as (row, col) of the flattened kernels.
    pub fn get(
        &self,
        layer_i: usize,
        entry_i: (usize, usize),
        layer_j: usize,
        entry_j: (usize, usize),
    ) -> (f64, f64) {
        let i = self.offsets[layer_i] + entry_i.0 * self.layer_dims[layer_i] + entry_i.1;
        let j = self.offsets[layer_j] + entry_j.0 * self.layer_dims[layer_j] + entry_j.1;
        (self.cov[(i, j)], self.se[(i, j)])
    }

    /// Covariance block of one layer with itself, as a `(c^2) x (c^2)`
    /// matrix in the same row-major flattening as `CovTensor`.
    pub fn layer_block(&self, layer: usize) -> (Mat, Mat) {
        let c = self.layer_dims[layer];
        let o = self.offsets[layer];
        (
            self.cov.view((o, o), (c * c, c * c)).into_owned(),
            self.se.view((o, o), (c * c, c * c)).into_owned(),
        )
    }
}

/// Draw `n_draws` prior samples of the network's hidden-layer kernels and
/// report unbiased sample statistics. Deterministic given `(seed, n_draws)`:
/// every draw owns a counter-based RNG stream, so results do not depend on
/// how draws are scheduled.
pub fn prior_cumulant_oracle(
    config: &NetworkConfig,
    x: &Mat,
    n_draws: usize,
    seed: u64,
    opts: &PriorOracleOptions,
) -> Result<PriorKernelStats> {
    if n_draws < 1000 {
        return Err(CoreError::invalid("need at least 1000 draws"));
    }
    if opts.batches < 2 || n_draws < 2 * opts.batches {
        return Err(CoreError::invalid("need at least two draws per batch"));
    }
    let antithetic = opts.antithetic.unwrap_or_else(|| antithetic_recommended(config));

    // Shapes from a probe draw.
    let mut probe_rng = stream_rng(seed, 0);
    let probe = kernels_from_activations(&draw_features(config, x, &mut probe_rng, false)?);
    let layer_dims: Vec<usize> = probe.iter().map(|k| k.nrows()).collect();
    let total_dim: usize = layer_dims.iter().map(|&c| c * c).sum();
    if opts.collect_covariance && total_dim > 4096 {
        return Err(CoreError::ResourceLimit(format!(
            "stacked kernel dimension {total_dim} too large for covariance collection"
        )));
    }
    let offsets: Vec<usize> = layer_dims
        .iter()
        .scan(0usize, |acc, &c| {
            let here = *acc;
            *acc += c * c;
            Some(here)
        })
        .collect();

    let batches = opts.batches;
    let mut batch_means: Vec<Mat> = Vec::with_capacity(batches);
    let mut batch_covs: Vec<Mat> = Vec::with_capacity(batches);
    let mut draw_index = 0usize;
    for b in 0..batches {
        let quota = n_draws / batches + usize::from(b < n_draws % batches);
        let mut sum = nalgebra::DVector::<f64>::zeros(total_dim);
        let mut cross = if opts.collect_covariance {
            Some(Mat::zeros(total_dim, total_dim))
        } else {
            None
        };
        let mut done = 0usize;
        while done < quota {
            let rng = stream_rng(seed, draw_index as u64);
            draw_index += 1;
            let flips: &[bool] =
                if antithetic && quota - done >= 2 { &[false, true] } else { &[false] };
            for &flip in flips {
                // The antithetic mate reuses the same stream state with the
                // normals negated.
                let mut rng_use = rng.clone();
                let draw = draw_features(config, x, &mut rng_use, flip)?;
                let kernels = kernels_from_activations(&draw);
                let v = stack_kernels(&kernels, total_dim, &offsets);
                sum += &v;
                if let Some(cr) = cross.as_mut() {
                    cr.ger(1.0, &v, &v, 1.0);
                }
                done += 1;
                if done >= quota {
                    break;
                }
            }
        }
        let mean = &sum / quota as f64;
        if let Some(cr) = cross {
            let full = mat::symmetrize(&cr);
            let cov = (full - quota as f64 * &mean * mean.transpose()) / (quota as f64 - 1.0);
            batch_covs.push(cov);
        }
        batch_means.push(Mat::from_column_slice(total_dim, 1, mean.as_slice()));
    }

    let (mean_vec, mean_se_vec) = batch_mean_se(&batch_means);
    let covariance = if opts.collect_covariance {
        let (cov, cov_se) = batch_mean_se(&batch_covs);
        Some(KernelCovarianceStats {
            layer_dims: layer_dims.clone(),
            offsets: offsets.clone(),
            cov,
            se: cov_se,
        })
    } else {
        None
    };

    let mut mean = Vec::with_capacity(layer_dims.len());
    let mut mean_se = Vec::with_capacity(layer_dims.len());
    for (l, &c) in layer_dims.iter().enumerate() {
        let o = offsets[l];
        mean.push(Mat::from_fn(c, c, |i, j| mean_vec[(o + i * c + j, 0)]));
        mean_se.push(Mat::from_fn(c, c, |i, j| mean_se_vec[(o + i * c + j, 0)]));
    }

    Ok(PriorKernelStats { n_draws, layer_dims, mean, mean_se, covariance })
}

fn stack_kernels(kernels: &[Mat], total: usize, offsets: &[usize]) -> nalgebra::DVector<f64> {
    let mut v = nalgebra::DVector::<f64>::zeros(total);
    for (k, &o) in kernels.iter().zip(offsets) {
        let c = k.nrows();
        for i in 0..c {
            for j in 0..c {
                v[o + i * c + j] = k[(i, j)];
            }
        }
    }
    v
}

fn batch_mean_se(batches: &[Mat]) -> (Mat, Mat) {
    let b = batches.len();
    let mean = batches.iter().fold(Mat::zeros(batches[0].nrows(), batches[0].ncols()), |a, m| a + m)
        / b as f64;
    let mut var = Mat::zeros(mean.nrows(), mean.ncols());
    for m in batches {
        let d = m - &mean;
        var += d.component_mul(&d);
    }
    var /= (b - 1) as f64 * b as f64;
    (mean, var.map(libm::sqrt))
}

