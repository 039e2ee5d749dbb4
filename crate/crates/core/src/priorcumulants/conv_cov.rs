//! Leading CNN kernel covariance, evaluated lazily per requested block.
//!
//! The full eight-index object is never materialized: for `p*s` beyond toy
//! sizes it would be enormous, so the constructor precomputes the
//! infinite-width kernel and the tau-fold filter-convolved shift weights, and
//! [`CnnKernelCovariance::block`] assembles single entries on demand.

use crate::error::{CoreError, Result};
use crate::gpkernels::{cnn_linear_gp, FilterSpec, FourIndexKernel, WidthProfile};
use crate::mat::Mat;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

/// Default cap on `p * s` for covariance requests.
pub const DEFAULT_BLOCK_CAP: usize = 256;

/// `cov_W(K^(l)_{mu nu, a b}, K^(l+tau)_{rho lambda, c d})` for a deep
/// linear CNN to leading order in the inverse channel counts:
/// the same-layer Wick pair of infinite-width kernels, propagated through
/// the filter-weighted spatial shift sum `tau` times on the later slot.
#[derive(Debug, Clone)]
pub struct CnnKernelCovariance {
    k_inf: FourIndexKernel,
    /// Composite shift distribution of the tau-layer propagation: weight per
    /// linear spatial offset.
    shift_weights: Vec<f64>,
    prefactor: f64,
    inverse_width_sum: f64,
}

impl CnnKernelCovariance {
    /// Prepare the covariance of layers `(layer, layer + lag)` with the
    /// default memory cap.
    pub fn new(
        gxx_tensor: &FourIndexKernel,
        filters: &[FilterSpec],
        profile: &WidthProfile,
        layer: usize,
        lag: usize,
    ) -> Result<Self> {
        Self::with_cap(gxx_tensor, filters, profile, layer, lag, DEFAULT_BLOCK_CAP)
    }

    pub fn with_cap(
        gxx_tensor: &FourIndexKernel,
        filters: &[FilterSpec],
        profile: &WidthProfile,
        layer: usize,
        lag: usize,
        cap: usize,
    ) -> Result<Self> {
        let p = gxx_tensor.samples();
        let s = gxx_tensor.sites();
        if p * s > cap {
            return Err(CoreError::ResourceLimit(format!(
                "p*s = {} exceeds the covariance cap {cap}",
                p * s
            )));
        }
        if layer == 0 || layer + lag > profile.depth() - 1 {
            return Err(CoreError::invalid(format!(
                "need 1 <= layer and layer+lag <= {}, got layer {layer}, lag {lag}",
                profile.depth() - 1
            )));
        }
        let k_inf = cnn_linear_gp(gxx_tensor, filters, profile, layer)?;

        // tau-fold circular convolution of the filter tap distributions of
        // layers layer+1 .. layer+lag.
        let shape = gxx_tensor.spatial();
        let mut shift_weights = vec![0.0; s];
        shift_weights[0] = 1.0;
        for l in (layer + 1)..=(layer + lag) {
            let filter = &filters[l - 1];
            let mut next = vec![0.0; s];
            for (offset, w) in filter.taps() {
                let table = shape.shift_table(&offset);
                for a in 0..s {
                    next[table[a]] += w * shift_weights[a];
                }
            }
            shift_weights = next;
        }

        Ok(Self {
            k_inf,
            shift_weights,
            prefactor: profile.sigma_sq_product(layer + 1, layer + lag),
            inverse_width_sum: profile.inverse_width_sum(layer)?,
        })
    }

    pub fn k_inf(&self) -> &FourIndexKernel {
        &self.k_inf
    }

    /// One covariance entry
    /// `cov(K^(l)_{mu nu, a b}, K^(l+lag)_{rho lambda, c d})`.
    #[allow(clippy::too_many_arguments)]
    pub fn block(
        &self,
        mu: usize,
        nu: usize,
        a: usize,
        b: usize,
        rho: usize,
        lambda: usize,
        c: usize,
        d: usize,
    ) -> f64 {
        let shape = self.k_inf.spatial();
        let mut total = 0.0;
        for (shift, &w) in self.shift_weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let cs = add_sites(shape, c, shift);
            let ds = add_sites(shape, d, shift);
            total += w
                * (self.k_inf.get(mu, rho, a, cs) * self.k_inf.get(nu, lambda, b, ds)
                    + self.k_inf.get(mu, lambda, a, ds) * self.k_inf.get(nu, rho, b, cs));
        }
        self.prefactor * self.inverse_width_sum * total
    }

    /// Same-layer covariance contracted as a dense `(p s)^2 x (p s)^2`
    /// matrix; only for small instances (tests and oracles).
    pub fn dense(&self) -> Mat {
        let p = self.k_inf.samples();
        let s = self.k_inf.sites();
        let n = p * s;
        let mut out = Mat::zeros(n * n, n * n);
        for mu in 0..p {
            for a in 0..s {
                for nu in 0..p {
                    for b in 0..s {
                        let row = (mu * s + a) * n + (nu * s + b);
                        for rho in 0..p {
                            for c in 0..s {
                                for lambda in 0..p {
                                    for d in 0..s {
                                        let col = (rho * s + c) * n + (lambda * s + d);
                                        out[(row, col)] =
                                            self.block(mu, nu, a, b, rho, lambda, c, d);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Linear-index circular addition of two sites (adds their coordinate
/// vectors modulo the grid).
fn add_sites(shape: &crate::gpkernels::SpatialShape, a: usize, b: usize) -> usize {
    // Decode b into per-axis offsets and reuse the signed-shift helper.
    let mut offsets: Vec<isize> = Vec::with_capacity(shape.axes());
    let mut rest = b;
    for &d in shape.dims().iter().rev() {
        offsets.push((rest % d) as isize);
        rest /= d;
    }
    offsets.reverse();
    shape.shifted(a, &offsets)
}
