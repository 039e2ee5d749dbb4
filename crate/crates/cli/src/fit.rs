//! Log-log power-law fits for the width-scaling reports.

use crate::error::{AppError, Result};

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct PowerLawFit {
    pub slope: f64,
    pub intercept: f64,
    /// 95% confidence interval on the slope.
    pub slope_ci: (f64, f64),
    pub residual_rms: f64,
}

/// Two-sided 97.5% Student-t quantiles for 1..=30 degrees of freedom.
const T_975: [f64; 30] = [
    12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179, 2.160,
    2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064, 2.060, 2.056,
    2.052, 2.048, 2.045, 2.042,
];

/// Least squares of `log value` on `log n`, with the standard regression
/// confidence interval for the slope.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerLawFit> {
    if points.len() < 3 {
        return Err(AppError::Config(format!(
            "power-law fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|&(n, v)| !(n > 0.0) || !(v > 0.0)) {
        return Err(AppError::Config("power-law fit needs positive coordinates".into()));
    }
    let xs: Vec<f64> = points.iter().map(|&(n, _)| n.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, v)| v.ln()).collect();
    let n = xs.len() as f64;
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
    if sxx == 0.0 {
        return Err(AppError::Config("power-law fit needs at least two distinct widths".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let df = xs.len() - 2;
    let se_slope = if df > 0 { (ss_res / df as f64 / sxx).sqrt() } else { 0.0 };
    let t = if df == 0 {
        0.0
    } else if df <= 30 {
        T_975[df - 1]
    } else {
        1.96
    };
    Ok(PowerLawFit {
        slope,
        intercept,
        slope_ci: (slope - t * se_slope, slope + t * se_slope),
        residual_rms: (ss_res / xs.len() as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_inverse_law() {
        let pts: Vec<(f64, f64)> = [32.0, 64.0, 128.0, 256.0].iter().map(|&n| (n, 3.0 / n)).collect();
        let fit = fit_power_law(&pts).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-12);
        assert!(fit.residual_rms < 1e-12);
        assert!((fit.intercept - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn exact_inverse_square_law() {
        let pts: Vec<(f64, f64)> = [32.0, 64.0, 128.0].iter().map(|&n| (n, 5.0 / (n * n))).collect();
        let fit = fit_power_law(&pts).unwrap();
        assert!((fit.slope + 2.0).abs() < 1e-12);
    }

    #[test]
    fn noisy_inverse_law_within_ci() {
        // 10% multiplicative noise, fixed pattern.
        let noise = [1.08, 0.93, 1.05, 0.96];
        let pts: Vec<(f64, f64)> = [64.0, 128.0, 256.0, 512.0]
            .iter()
            .zip(&noise)
            .map(|(&n, &f)| (n, f * 2.0 / n))
            .collect();
        let fit = fit_power_law(&pts).unwrap();
        assert!((fit.slope + 1.0).abs() < 0.15, "slope {}", fit.slope);
        assert!(fit.slope_ci.0 <= -1.0 && -1.0 <= fit.slope_ci.1);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(fit_power_law(&[(1.0, 1.0), (2.0, 0.5)]).is_err());
        assert!(fit_power_law(&[(1.0, 1.0), (2.0, -0.5), (3.0, 0.2)]).is_err());
    }
}
