//! Task construction: class-balanced IDX selection and synthetic Gaussian
//! tasks.

use crate::error::{AppError, Result};
use nalgebra::DMatrix;
use widthfx_core::mathcore::GramMatrix;
use widthfx_core::rng::{normal_matrix, stream_rng};
use widthfx_core::sampler::Dataset;

/// Dataset plus its Gram matrices.
#[derive(Debug, Clone)]
pub struct BuiltTask {
    pub dataset: Dataset,
    pub gxx: GramMatrix,
    pub gyy: GramMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleOrdering {
    /// Selected samples arranged by class, then file order (the default).
    ByClass,
    /// Selected samples kept in file order.
    FileOrder,
}

/// Deterministic class-balanced selection of `p` samples: the first
/// `floor(p/c)` (plus one for the first `p mod c` classes) file-order
/// occurrences of each class, one-hot targets. `G_xx` is normalized by the
/// input dimension and `G_yy` by the class count.
pub fn build_task(
    images: &DMatrix<f64>,
    labels: &[usize],
    p: usize,
    ordering: SampleOrdering,
) -> Result<BuiltTask> {
    if images.nrows() != labels.len() {
        return Err(AppError::Config(format!(
            "{} images but {} labels",
            images.nrows(),
            labels.len()
        )));
    }
    if p == 0 || p > labels.len() {
        return Err(AppError::Config(format!(
            "p = {p} out of range 1..={}",
            labels.len()
        )));
    }
    let classes = labels.iter().max().map(|&m| m + 1).unwrap_or(0);
    if classes == 0 {
        return Err(AppError::Config("no classes in label data".into()));
    }
    // Per-class quotas, filled in file order.
    let mut quota: Vec<usize> =
        (0..classes).map(|c| p / classes + usize::from(c < p % classes)).collect();
    let mut selected: Vec<usize> = Vec::with_capacity(p);
    for (idx, &class) in labels.iter().enumerate() {
        if quota[class] > 0 {
            quota[class] -= 1;
            selected.push(idx);
        }
        if selected.len() == p {
            break;
        }
    }
    if selected.len() < p {
        return Err(AppError::Config(format!(
            "class-balanced selection found only {} of {p} requested samples",
            selected.len()
        )));
    }
    if ordering == SampleOrdering::ByClass {
        selected.sort_by_key(|&i| (labels[i], i));
    }

    let dim = images.ncols();
    let mut x = DMatrix::zeros(p, dim);
    let mut y = DMatrix::zeros(p, classes);
    for (row, &i) in selected.iter().enumerate() {
        x.row_mut(row).copy_from(&images.row(i));
        y[(row, labels[i])] = 1.0;
    }
    let gxx = GramMatrix::from_samples(&x, dim)?;
    let gyy = GramMatrix::from_samples(&y, classes)?;
    Ok(BuiltTask { dataset: Dataset::new(x, y)?, gxx, gyy })
}

/// Target construction for synthetic tasks.
#[derive(Debug, Clone)]
pub enum Teacher {
    /// `Y = X T / sqrt(n_0)` with a standard-normal teacher map.
    RandomLinear,
    /// Orthonormal targets: `Y = sqrt(n_d) Q` for Haar-random `Q`
    /// (`p x n_d`), so `G_yy` is a rank-`n_d` projector.
    RandomRotation,
    /// Targets factored from a prescribed `G_yy` (rank at most `n_d`).
    PrescribedGyy(DMatrix<f64>),
}

/// Synthetic Gaussian task: `X` has i.i.d. standard normal entries
/// (`p x n_0`), targets per the teacher; bitwise reproducible from the seed.
pub fn synthetic_task(
    seed: u64,
    n0: usize,
    p: usize,
    n_d: usize,
    teacher: &Teacher,
) -> Result<BuiltTask> {
    if n0 == 0 || p == 0 || n_d == 0 {
        return Err(AppError::Config("n0, p, n_d must all be positive".into()));
    }
    let mut rng = stream_rng(seed, 0);
    let x = normal_matrix(&mut rng, p, n0);
    let y = match teacher {
        Teacher::RandomLinear => {
            let t = normal_matrix(&mut rng, n0, n_d);
            (&x * t) / (n0 as f64).sqrt()
        }
        Teacher::RandomRotation => {
            if p < n_d {
                return Err(AppError::Config(format!(
                    "random-rotation teacher needs p >= n_d, got p = {p}, n_d = {n_d}"
                )));
            }
            let g = normal_matrix(&mut rng, p, n_d);
            let qr = g.qr();
            let mut q = qr.q();
            let r = qr.r();
            // Fix the sign convention so the result is seed-deterministic
            // and independent of the QR implementation's column signs.
            for c in 0..n_d {
                if r[(c, c)] < 0.0 {
                    for rix in 0..p {
                        q[(rix, c)] = -q[(rix, c)];
                    }
                }
            }
            q * (n_d as f64).sqrt()
        }
        Teacher::PrescribedGyy(g) => {
            if g.nrows() != p || g.ncols() != p {
                return Err(AppError::Config("prescribed G_yy must be p x p".into()));
            }
            let factor = widthfx_core::mat::psd_factor(&(n_d as f64 * g), 1e-12);
            if factor.ncols() > n_d {
                return Err(AppError::Config(format!(
                    "prescribed G_yy has rank {} > n_d = {n_d}",
                    factor.ncols()
                )));
            }
            let mut y = DMatrix::zeros(p, n_d);
            y.view_mut((0, 0), (p, factor.ncols())).copy_from(&factor);
            y
        }
    };
    let gxx = GramMatrix::from_samples(&x, n0)?;
    let gyy = GramMatrix::from_samples(&y, n_d)?;
    Ok(BuiltTask { dataset: Dataset::new(x, y)?, gxx, gyy })
}
