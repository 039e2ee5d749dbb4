//! Exact prior sampling in feature space.
//!
//! Given the post-activations of all earlier layers, the rows (channels) of
//! the next layer's pre-activation are i.i.d. Gaussian with covariance built
//! from the *empirical* kernels of its source layers — for MLPs
//! `sigma_l^2 (A^T A)/n_prev`, for circular convolutions the filter-weighted
//! shift sum, for skip connections the sum over incoming edges. Sampling that
//! conditional chain layer by layer reproduces the prior law of every
//! hidden-layer observable exactly while never materializing weight
//! matrices, which is what makes the 10^5..10^6-draw oracles affordable.

use super::{Architecture, NetworkConfig};
use crate::error::{CoreError, Result};
use crate::gpkernels::FourIndexKernel;
use crate::mat::{self, Mat};
use crate::rng::normal_matrix;
use alloc::vec::Vec;
use rand_chacha::ChaCha8Rng;

/// Post-activations of every hidden layer for one prior draw; each matrix is
/// `n_l x C` with column index sample (MLP) or sample*sites + site (CNN).
#[derive(Debug, Clone)]
pub struct FeatureDraw {
    pub activations: Vec<Mat>,
}

/// Draw the hidden-layer feature chain for inputs `x` (`P x n_in` rows).
///
/// With `flip_sign`, the underlying standard normals are negated — the
/// antithetic mate of the same `rng` state.
pub fn draw_features(
    config: &NetworkConfig,
    x: &Mat,
    rng: &mut ChaCha8Rng,
    flip_sign: bool,
) -> Result<FeatureDraw> {
    config.validate_filters_present()?;
    let act = config.activation();
    let d = config.depth();
    let s = config.sites();
    let p = x.nrows();
    let cdim = p * s;

    // Layer-0 "activation": inputs as channels x (samples * sites).
    let mut a_prev = super::forward::input_activation(config, x)?;

    let mut source_kernels: Vec<Mat> = Vec::new(); // skip connections need all of them
    let mut activations = Vec::with_capacity(d - 1);

    for l in 1..=(d - 1) {
        let n_l = config.profile().width(l);
        let cov = match config.arch() {
            Architecture::CnnLinear { spatial } => {
                let k_prev = empirical_kernel(&a_prev);
                let filter = &config.filters()[l - 1];
                let sigma_sq = config.profile().sigma_sq(l);
                let mut cov = Mat::zeros(cdim, cdim);
                for (offset, weight) in filter.taps() {
                    let table = spatial.shift_table(&offset);
                    let w = sigma_sq * weight;
                    for mu in 0..p {
                        for nu in 0..p {
                            for a in 0..s {
                                let ra = mu * s + table[a];
                                for b in 0..s {
                                    cov[(mu * s + a, nu * s + b)] +=
                                        w * k_prev[(ra, nu * s + table[b])];
                                }
                            }
                        }
                    }
                }
                cov
            }
            Architecture::MlpLinear if config.skip().is_some() => {
                let skip = config.skip().expect("checked");
                if source_kernels.len() < l {
                    source_kernels.push(empirical_kernel(&a_prev));
                }
                let mut cov = Mat::zeros(cdim, cdim);
                for (from, kernel) in source_kernels.iter().enumerate().take(l) {
                    let edge = skip.edge(l, from);
                    if edge > 0.0 {
                        cov += edge * kernel;
                    }
                }
                cov
            }
            _ => config.profile().sigma_sq(l) * empirical_kernel(&a_prev),
        };

        // Rows of the pre-activation are iid N(0, cov).
        let factor = mat::psd_factor(&mat::symmetrize(&cov), 1e-12);
        let mut z = normal_matrix(rng, n_l, factor.ncols());
        if flip_sign {
            z.neg_mut();
        }
        let mut h = z * factor.transpose();
        for v in h.iter_mut() {
            *v = act.apply(*v);
        }

        if config.skip().is_some() {
            source_kernels.push(empirical_kernel(&h));
        }
        a_prev = h.clone();
        activations.push(h);
    }

    Ok(FeatureDraw { activations })
}

/// `(A^T A) / n` for an `n x C` activation matrix.
fn empirical_kernel(a: &Mat) -> Mat {
    let n = a.nrows().max(1);
    mat::symmetrize(&((a.transpose() * a) / n as f64))
}

/// Per-layer kernels of one draw: `p x p` matrices (MLP) or `(p*s) x (p*s)`
/// flattened four-index kernels (CNN).
pub fn kernels_from_activations(draw: &FeatureDraw) -> Vec<Mat> {
    draw.activations.iter().map(empirical_kernel).collect()
}

/// Reshape a flattened CNN kernel into the four-index type (validation
/// included).
pub fn kernel_as_four_index(config: &NetworkConfig, p: usize, flat: Mat) -> Result<FourIndexKernel> {
    match config.arch() {
        Architecture::CnnLinear { spatial } => FourIndexKernel::new(flat, p, spatial.clone()),
        _ => Err(CoreError::invalid("four-index kernels only exist for CNN architectures")),
    }
}

/// Whether antithetic pairing can change anything: kernels are even in the
/// feature signs, so flipping the underlying Gaussians is a no-op for linear
/// architectures and for activations that are even or odd; only activations
/// that are neither (relu, generic customs) benefit.
pub fn antithetic_recommended(config: &NetworkConfig) -> bool {
    use crate::gpkernels::ActivationSpec;
    let act = match config.arch() {
        Architecture::MlpRelu => ActivationSpec::Relu,
        Architecture::SingleNonlinear(act) => act.clone(),
        _ => return false,
    };
    let probes = [0.31, 0.77, 1.42, 2.3];
    let mut even = true;
    let mut odd = true;
    for &x in &probes {
        let f = act.apply(x);
        let g = act.apply(-x);
        if (f - g).abs() > 1e-12 * f.abs().max(1.0) {
            even = false;
        }
        if (f + g).abs() > 1e-12 * f.abs().max(1.0) {
            odd = false;
        }
    }
    !(even || odd)
}
