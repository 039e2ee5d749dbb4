//! Four-index CNN kernels on a circular spatial topology.

use crate::error::{CoreError, Result};
use crate::gpkernels::WidthProfile;
use crate::mat::{self, Mat};
use crate::mathcore::{GramMatrix, SYMMETRY_REL_TOL};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

/// Per-axis extents of the (periodic) spatial grid; 1D and 2D share the one
/// code path through row-major multi-index arithmetic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpatialShape {
    dims: Vec<usize>,
}

impl SpatialShape {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(CoreError::invalid("spatial shape needs positive extents"));
        }
        Ok(Self { dims })
    }

    pub fn one_d(s: usize) -> Result<Self> {
        Self::new(vec![s])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn axes(&self) -> usize {
        self.dims.len()
    }

    /// Total number of sites.
    pub fn size(&self) -> usize {
        self.dims.iter().product()
    }

    fn decode(&self, mut lin: usize) -> Vec<usize> {
        let mut coords = vec![0usize; self.dims.len()];
        for (c, &d) in coords.iter_mut().zip(&self.dims).rev() {
            *c = lin % d;
            lin /= d;
        }
        coords
    }

    fn encode(&self, coords: &[usize]) -> usize {
        let mut lin = 0;
        for (&c, &d) in coords.iter().zip(&self.dims) {
            lin = lin * d + c;
        }
        lin
    }

    /// Site reached from linear index `a` by the (possibly negative) per-axis
    /// offset, wrapping circularly.
    pub fn shifted(&self, a: usize, offset: &[isize]) -> usize {
        let mut coords = self.decode(a);
        for ((c, &o), &d) in coords.iter_mut().zip(offset).zip(&self.dims) {
            let d = d as isize;
            *c = (((*c as isize + o) % d + d) % d) as usize;
        }
        self.encode(&coords)
    }

    /// Permutation table `a -> a + offset` over all sites.
    pub fn shift_table(&self, offset: &[isize]) -> Vec<usize> {
        (0..self.size()).map(|a| self.shifted(a, offset)).collect()
    }
}

/// Receptive-field weights `v_a > 0` with `sum v_a = 1`, on a
/// `(2k+1)^axes` window.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterSpec {
    half_width: usize,
    axes: usize,
    weights: Vec<f64>,
}

impl FilterSpec {
    pub fn new(half_width: usize, axes: usize, weights: Vec<f64>) -> Result<Self> {
        if axes == 0 {
            return Err(CoreError::invalid("filter needs at least one axis"));
        }
        let expect = (2 * half_width + 1).pow(axes as u32);
        if weights.len() != expect {
            return Err(CoreError::invalid(format!(
                "filter with half-width {half_width} over {axes} axes needs {expect} weights, got {}",
                weights.len()
            )));
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(CoreError::invalid("all filter weights must be positive"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(CoreError::invalid(format!(
                "filter weights must sum to 1 (got {sum:.15})"
            )));
        }
        Ok(Self { half_width, axes, weights })
    }

    /// Uniform weights `1/(2k+1)^axes`.
    pub fn uniform(half_width: usize, axes: usize) -> Self {
        let n = (2 * half_width + 1).pow(axes as u32);
        Self { half_width, axes, weights: vec![1.0 / n as f64; n] }
    }

    pub fn half_width(&self) -> usize {
        self.half_width
    }

    pub fn axes(&self) -> usize {
        self.axes
    }

    /// `(offset, weight)` pairs over the receptive field, row-major.
    pub fn taps(&self) -> Vec<(Vec<isize>, f64)> {
        let w = 2 * self.half_width + 1;
        let mut out = Vec::with_capacity(self.weights.len());
        for (flat, &weight) in self.weights.iter().enumerate() {
            let mut rest = flat;
            let mut offset = vec![0isize; self.axes];
            for o in offset.iter_mut().rev() {
                *o = (rest % w) as isize - self.half_width as isize;
                rest /= w;
            }
            out.push((offset, weight));
        }
        out
    }

    fn check_fits(&self, shape: &SpatialShape) -> Result<()> {
        if self.axes != shape.axes() {
            return Err(CoreError::invalid(format!(
                "filter has {} axes but the spatial shape has {}",
                self.axes,
                shape.axes()
            )));
        }
        let window = 2 * self.half_width + 1;
        if shape.dims().iter().any(|&d| window > d) {
            return Err(CoreError::invalid(format!(
                "filter window {window} exceeds a spatial extent {:?}",
                shape.dims()
            )));
        }
        Ok(())
    }
}

/// Kernel indexed by sample pair and spatial pair, stored as its
/// `(p*s) x (p*s)` flattening with row index `mu*s + a`. Exchange symmetry
/// of the four-index object is exactly matrix symmetry of the flattening.
#[derive(Debug, Clone, PartialEq)]
pub struct FourIndexKernel {
    p: usize,
    shape: SpatialShape,
    m: Mat,
}

/// PSD floor (relative to the Frobenius norm) for four-index kernels.
pub const FOUR_INDEX_PSD_REL_FLOOR: f64 = 1e-8;

impl FourIndexKernel {
    pub fn new(m: Mat, p: usize, shape: SpatialShape) -> Result<Self> {
        let s = shape.size();
        if m.nrows() != p * s || m.ncols() != p * s {
            return Err(CoreError::invalid(format!(
                "flattened kernel must be {n}x{n} for p={p}, s={s}, got {}x{}",
                m.nrows(),
                m.ncols(),
                n = p * s
            )));
        }
        mat::require_symmetric(&m, SYMMETRY_REL_TOL, "four-index kernel")?;
        mat::require_psd(&m, FOUR_INDEX_PSD_REL_FLOOR * mat::frobenius(&m), "four-index kernel")?;
        Ok(Self { p, shape, m })
    }

    /// Input Gram tensor `[G_xx]_{mu nu, a b} = (1/n0) sum_i x_{mu,i,a} x_{nu,i,b}`
    /// from inputs laid out as `p` rows with column `i*s + a` (channel-major).
    pub fn gram_from_inputs(x: &Mat, channels: usize, shape: SpatialShape) -> Result<Self> {
        let s = shape.size();
        if channels == 0 {
            return Err(CoreError::invalid("need at least one input channel"));
        }
        if x.ncols() != channels * s {
            return Err(CoreError::invalid(format!(
                "inputs must have {} columns (channels {} x sites {}), got {}",
                channels * s,
                channels,
                s,
                x.ncols()
            )));
        }
        let p = x.nrows();
        let mut m = Mat::zeros(p * s, p * s);
        for mu in 0..p {
            for nu in 0..p {
                for a in 0..s {
                    for b in 0..s {
                        let mut acc = 0.0;
                        for i in 0..channels {
                            acc += x[(mu, i * s + a)] * x[(nu, i * s + b)];
                        }
                        m[(mu * s + a, nu * s + b)] = acc / channels as f64;
                    }
                }
            }
        }
        Self::new(mat::symmetrize(&m), p, shape)
    }

    /// View a plain Gram matrix as the degenerate `s = 1` tensor.
    pub fn from_flat(gram: &GramMatrix) -> Result<Self> {
        Self::new(gram.entries().clone(), gram.dim(), SpatialShape::one_d(1)?)
    }

    pub fn samples(&self) -> usize {
        self.p
    }

    pub fn spatial(&self) -> &SpatialShape {
        &self.shape
    }

    pub fn sites(&self) -> usize {
        self.shape.size()
    }

    /// Flattened `(p*s) x (p*s)` view.
    pub fn flat(&self) -> &Mat {
        &self.m
    }

    pub fn get(&self, mu: usize, nu: usize, a: usize, b: usize) -> f64 {
        let s = self.shape.size();
        self.m[(mu * s + a, nu * s + b)]
    }
}

/// One step of the infinite-width CNN recurrence:
/// `out[mu nu, a b] = sigma_sq * sum_c v_c in[mu nu, (a+c)(b+c)]`.
fn cnn_gp_step(k: &FourIndexKernel, filter: &FilterSpec, sigma_sq: f64) -> Result<FourIndexKernel> {
    filter.check_fits(&k.shape)?;
    let s = k.sites();
    let p = k.p;
    let mut out = Mat::zeros(p * s, p * s);
    for (offset, weight) in filter.taps() {
        let table = k.shape.shift_table(&offset);
        let w = sigma_sq * weight;
        for mu in 0..p {
            for nu in 0..p {
                for a in 0..s {
                    let sa = mu * s + table[a];
                    for b in 0..s {
                        out[(mu * s + a, nu * s + b)] += w * k.m[(sa, nu * s + table[b])];
                    }
                }
            }
        }
    }
    FourIndexKernel::new(mat::symmetrize(&out), p, k.shape.clone())
}

/// Infinite-width four-index kernel of hidden layer `layer` of a deep linear
/// CNN: the recurrence applied iteratively from the layer-0 input tensor,
/// with circular index arithmetic per spatial axis.
pub fn cnn_linear_gp(
    gxx_tensor: &FourIndexKernel,
    filters: &[FilterSpec],
    profile: &WidthProfile,
    layer: usize,
) -> Result<FourIndexKernel> {
    if layer == 0 || layer >= profile.depth() {
        return Err(CoreError::invalid(format!(
            "layer {layer} out of range 1..={}",
            profile.depth() - 1
        )));
    }
    if filters.len() < layer {
        return Err(CoreError::invalid(format!(
            "need a filter per convolutional layer (have {}, need {layer})",
            filters.len()
        )));
    }
    let mut k = gxx_tensor.clone();
    for l in 1..=layer {
        k = cnn_gp_step(&k, &filters[l - 1], profile.sigma_sq(l))?;
    }
    Ok(k)
}

/// How the final convolutional layer is read out across space.
#[derive(Debug, Clone, PartialEq)]
pub enum ReadoutStrategy {
    /// Flatten channels x space; feature kernel `(1/s) sum_a K[.., a a]`.
    Vectorization,
    /// Contract space against a fixed vector `u`; feature kernel
    /// `sum_{a,b} u_a u_b K[.., a b]`. Global average pooling is `u = 1/s`.
    Projection(Vec<f64>),
}

impl ReadoutStrategy {
    pub fn global_average_pooling(sites: usize) -> Self {
        ReadoutStrategy::Projection(vec![1.0 / sites as f64; sites])
    }

    /// Uniform-projection check used where only vectorization/GAP are valid.
    pub fn is_uniform(&self) -> bool {
        match self {
            ReadoutStrategy::Vectorization => true,
            ReadoutStrategy::Projection(u) => {
                let first = u.first().copied().unwrap_or(0.0);
                u.iter().all(|&x| (x - first).abs() <= 1e-12 * first.abs().max(1.0))
            }
        }
    }
}

/// Two-index feature-map kernel induced by the chosen readout strategy.
pub fn readout_kernel(k4: &FourIndexKernel, strategy: &ReadoutStrategy) -> Result<GramMatrix> {
    let p = k4.samples();
    let s = k4.sites();
    let mut out = Mat::zeros(p, p);
    match strategy {
        ReadoutStrategy::Vectorization => {
            for mu in 0..p {
                for nu in 0..p {
                    let mut acc = 0.0;
                    for a in 0..s {
                        acc += k4.get(mu, nu, a, a);
                    }
                    out[(mu, nu)] = acc / s as f64;
                }
            }
        }
        ReadoutStrategy::Projection(u) => {
            if u.len() != s {
                return Err(CoreError::invalid(format!(
                    "projection vector has {} entries, kernel has {s} sites",
                    u.len()
                )));
            }
            for mu in 0..p {
                for nu in 0..p {
                    let mut acc = 0.0;
                    for a in 0..s {
                        for b in 0..s {
                            acc += u[a] * u[b] * k4.get(mu, nu, a, b);
                        }
                    }
                    out[(mu, nu)] = acc;
                }
            }
        }
    }
    GramMatrix::new(mat::symmetrize(&out), 1)
}
