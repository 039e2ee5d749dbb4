//! Exact area-average downsampling.

use crate::error::{AppError, Result};
use nalgebra::DMatrix;

/// Downsample a square image by an exact box filter with fractional bin
/// overlap: output pixel `(i, j)` averages the source region
/// `[i*r, (i+1)*r) x [j*r, (j+1)*r)` for `r = src/target`. Constant images
/// map to constants and the mean pixel value is preserved.
pub fn downsample(image: &DMatrix<f64>, target: usize) -> Result<DMatrix<f64>> {
    let src = image.nrows();
    if image.ncols() != src {
        return Err(AppError::Config(format!(
            "downsample needs square images, got {}x{}",
            image.nrows(),
            image.ncols()
        )));
    }
    if target == 0 || target > src {
        return Err(AppError::Config(format!(
            "target side {target} must be in 1..={src}"
        )));
    }
    let r = src as f64 / target as f64;
    let weights = overlap_weights(src, target, r);
    let mut out = DMatrix::zeros(target, target);
    for i in 0..target {
        for j in 0..target {
            let mut acc = 0.0;
            for &(si, wi) in &weights[i] {
                for &(sj, wj) in &weights[j] {
                    acc += wi * wj * image[(si, sj)];
                }
            }
            out[(i, j)] = acc / (r * r);
        }
    }
    Ok(out)
}

/// Per output bin, the covered source indices with their overlap lengths.
fn overlap_weights(src: usize, target: usize, r: f64) -> Vec<Vec<(usize, f64)>> {
    (0..target)
        .map(|i| {
            let lo = i as f64 * r;
            let hi = (i + 1) as f64 * r;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            (first..last)
                .filter_map(|s| {
                    let w = (hi.min((s + 1) as f64) - lo.max(s as f64)).max(0.0);
                    (w > 0.0).then_some((s, w))
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_stays_constant() {
        let img = DMatrix::from_element(28, 28, 0.37);
        let out = downsample(&img, 10).unwrap();
        for v in out.iter() {
            assert!((v - 0.37).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_is_preserved() {
        let img = DMatrix::from_fn(28, 28, |i, j| ((i * 31 + j * 7) % 13) as f64 / 13.0);
        let out = downsample(&img, 10).unwrap();
        let mean_in = img.sum() / (28.0 * 28.0);
        let mean_out = out.sum() / 100.0;
        assert!((mean_in - mean_out).abs() < 1e-12);
    }

    #[test]
    fn corner_delta_mass_is_conserved() {
        let mut img = DMatrix::zeros(28, 28);
        img[(0, 0)] = 1.0;
        let out = downsample(&img, 10).unwrap();
        let r = 28.0 / 10.0;
        // Sum over outputs times the bin area recovers the input mass.
        assert!((out.sum() * r * r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn linearity() {
        let a = DMatrix::from_fn(14, 14, |i, j| (i + 2 * j) as f64);
        let b = DMatrix::from_fn(14, 14, |i, j| ((i * j) % 5) as f64);
        let lhs = downsample(&(2.0 * &a + 3.0 * &b), 5).unwrap();
        let rhs = 2.0 * downsample(&a, 5).unwrap() + 3.0 * downsample(&b, 5).unwrap();
        assert!((lhs - rhs).abs().max() < 1e-12);
    }

    #[test]
    fn matches_brute_force_integrator() {
        let img = DMatrix::from_fn(28, 28, |i, j| ((i * 17 + j * 3) % 11) as f64 / 11.0);
        let target = 10usize;
        let out = downsample(&img, target).unwrap();
        // Independent fractional-overlap integration on a fine subgrid.
        let sub = 140usize; // 5x oversampling of the source grid
        let mut brute = DMatrix::zeros(target, target);
        for i in 0..sub {
            for j in 0..sub {
                let x = (i as f64 + 0.5) * 28.0 / sub as f64;
                let y = (j as f64 + 0.5) * 28.0 / sub as f64;
                let oi = ((x / 2.8) as usize).min(target - 1);
                let oj = ((y / 2.8) as usize).min(target - 1);
                brute[(oi, oj)] += img[(x as usize, y as usize)];
            }
        }
        brute /= (sub * sub) as f64 / (target * target) as f64;
        assert!((out - brute).abs().max() < 1e-12);
    }

    #[test]
    fn upscaling_rejected() {
        let img = DMatrix::zeros(5, 5);
        assert!(downsample(&img, 6).is_err());
    }
}
