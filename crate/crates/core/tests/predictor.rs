//! Predictor statistics against closed forms, limits, and the importance
//! oracle.

use widthfx_core::corrections::TemperatureParams;
use widthfx_core::gpkernels::WidthProfile;
use widthfx_core::mat::{self, Mat};
use widthfx_core::mathcore::GramMatrix;
use widthfx_core::predictor::{
    bias_variance, least_norm_predictor, predictor_covariance, predictor_mean, predictor_mean_gp,
    proportional_regime_kernel, solve_implicit_kernel_recurrence, width_benefit_condition,
    TestSet, WidthBenefit,
};
use widthfx_core::rng::{normal_matrix, stream_rng};
use widthfx_core::sampler::{
    importance_oracle, Architecture, Dataset, ImportanceOptions, NetworkConfig,
};

fn make_testset(p: usize, p_hat: usize, n0: usize, n_d: usize, seed: u64) -> TestSet {
    let mut rng = stream_rng(seed, 0);
    let x = normal_matrix(&mut rng, p, n0);
    let y = normal_matrix(&mut rng, p, n_d);
    let xh = normal_matrix(&mut rng, p_hat, n0);
    let yh = normal_matrix(&mut rng, p_hat, n_d);
    TestSet::new(Dataset::new(x, y).unwrap(), Dataset::new(xh, yh).unwrap(), n0).unwrap()
}

#[test]
fn gp_mean_is_kernel_ridge() {
    let ts = make_testset(5, 3, 9, 2, 400);
    let profile = WidthProfile::new(vec![64, 64], 2, vec![1.2, 0.9, 1.1]).unwrap();
    let temp = TemperatureParams::new(1.5, 1.1).unwrap();
    let got = predictor_mean_gp(&ts, &profile, &temp).unwrap();
    // Manual kernel-ridge evaluation.
    let m_sq = profile.m_sq(2);
    let k = ts.gxx().entries() * m_sq;
    let gamma = &k + Mat::identity(5, 5) / (1.5 * 1.1);
    let want = (ts.gxh() * m_sq).transpose() * gamma.clone().lu().solve(ts.train().y()).unwrap();
    let rel = mat::frobenius(&(&got.test - &want)) / mat::frobenius(&want);
    assert!(rel <= 1e-10, "rel {rel}");
}

#[test]
fn infinite_width_limit_drops_the_correction() {
    let ts = make_testset(4, 3, 8, 2, 401);
    let temp = TemperatureParams::new(1.0, 1.0).unwrap();
    let wide = WidthProfile::new(vec![usize::MAX / 2, usize::MAX / 2], 2, vec![1.0, 1.0, 1.0])
        .unwrap();
    let mean = predictor_mean(&ts, &wide, &temp).unwrap();
    let gp = predictor_mean_gp(&ts, &wide, &temp).unwrap();
    let rel = mat::frobenius(&(&mean.test - &gp.test)) / mat::frobenius(&gp.test);
    assert!(rel < 1e-15, "rel {rel}");
}

#[test]
fn zero_temperature_interpolates_and_matches_pseudoinverse() {
    let ts = make_testset(5, 4, 10, 2, 402);
    let profile = WidthProfile::new(vec![128, 128], 2, vec![1.0, 1.0, 1.0]).unwrap();

    // Large finite beta: train predictor positions on the targets.
    let temp = TemperatureParams::new(1e6, 1.0).unwrap();
    let mean = predictor_mean(&ts, &profile, &temp).unwrap();
    let rel_train = mat::frobenius(&(&mean.train - ts.train().y()))
        / mat::frobenius(ts.train().y());
    assert!(rel_train <= 1e-4, "train rel {rel_train}");

    // Explicit limit mode equals the least-norm pseudoinverse predictor.
    let limit = TemperatureParams::zero_temperature_limit(1.0).unwrap();
    let lim_mean = predictor_mean(&ts, &profile, &limit).unwrap();
    let pinv = least_norm_predictor(&ts).unwrap();
    let rel_test =
        mat::frobenius(&(&lim_mean.test - &pinv)) / mat::frobenius(&pinv);
    assert!(rel_test <= 1e-10, "test rel {rel_test}");

    // And the finite-beta mean converges to it with an O(1/beta) gap.
    let rel_gap = mat::frobenius(&(&mean.test - &pinv)) / mat::frobenius(&pinv);
    assert!(rel_gap <= 1e-4, "gap {rel_gap}");
}

#[test]
fn covariance_limits() {
    let ts = make_testset(4, 3, 9, 2, 403);
    let profile = WidthProfile::new(vec![usize::MAX / 2], 2, vec![1.0, 1.0]).unwrap();
    let temp = TemperatureParams::new(2.0, 1.0).unwrap();
    let cov = predictor_covariance(&ts, &profile, &temp).unwrap();
    // Infinite width: GP predictive covariance, diagonal in outputs.
    let m_sq = 1.0;
    let k = ts.gxx().entries() * m_sq;
    let gamma = &k + Mat::identity(4, 4) / 2.0;
    let r_hat = ts.gxh() * m_sq;
    let gp = ts.ghh().entries() * m_sq
        - r_hat.transpose() * gamma.clone().lu().solve(&r_hat).unwrap();
    for mu in 0..3 {
        for nu in 0..3 {
            for j in 0..2 {
                for kk in 0..2 {
                    let want = if j == kk { gp[(mu, nu)] } else { 0.0 };
                    let got = cov.test.get(mu, j, nu, kk);
                    assert!((got - want).abs() <= 1e-10 * gp[(mu, mu)].abs().max(1e-6));
                }
            }
        }
    }

    // beta -> infinity: training covariance vanishes.
    let narrow = WidthProfile::new(vec![64], 2, vec![1.0, 1.0]).unwrap();
    let big_beta = TemperatureParams::new(1e8, 1.0).unwrap();
    let cov_bb = predictor_covariance(&ts, &narrow, &big_beta).unwrap();
    let scale = cov_bb.test.flat().amax();
    assert!(
        cov_bb.train.flat().amax() <= 1e-6 * scale.max(1e-12),
        "train cov {:.3e}",
        cov_bb.train.flat().amax()
    );
}

#[test]
fn rotation_invariance_of_errors() {
    let ts = make_testset(4, 3, 8, 3, 404);
    let profile = WidthProfile::new(vec![48], 3, vec![1.0, 1.0]).unwrap();
    let temp = TemperatureParams::new(1.0, 1.0).unwrap();
    let mean = predictor_mean(&ts, &profile, &temp).unwrap();
    let cov = predictor_covariance(&ts, &profile, &temp).unwrap();
    let bv_train = bias_variance(&mean.train, &cov.train, ts.train().y()).unwrap();
    let bv_test = bias_variance(&mean.test, &cov.test, ts.test().y()).unwrap();
    assert!(bv_train.bias >= 0.0 && bv_train.variance >= 0.0);

    // Rotate the outputs by a Householder reflection.
    let mut rng = stream_rng(405, 0);
    let v = normal_matrix(&mut rng, 3, 1).normalize();
    let r = Mat::identity(3, 3) - 2.0 * &v * v.transpose();
    let ts_rot = TestSet::new(
        Dataset::new(ts.train().x().clone(), ts.train().y() * &r).unwrap(),
        Dataset::new(ts.test().x().clone(), ts.test().y() * &r).unwrap(),
        ts.input_normalizer(),
    )
    .unwrap();
    let mean_rot = predictor_mean(&ts_rot, &profile, &temp).unwrap();
    let cov_rot = predictor_covariance(&ts_rot, &profile, &temp).unwrap();
    // Mean rotates with the targets.
    let rel = mat::frobenius(&(&mean_rot.test - &mean.test * &r))
        / mat::frobenius(&mean.test);
    assert!(rel <= 1e-10, "mean rotation rel {rel}");
    // Errors are invariant.
    let bv_train_rot = bias_variance(&mean_rot.train, &cov_rot.train, ts_rot.train().y()).unwrap();
    let bv_test_rot = bias_variance(&mean_rot.test, &cov_rot.test, ts_rot.test().y()).unwrap();
    assert!((bv_train.bias - bv_train_rot.bias).abs() <= 1e-10 * bv_train.bias.max(1e-12));
    assert!(
        (bv_test.variance - bv_test_rot.variance).abs()
            <= 1e-10 * bv_test.variance.max(1e-12)
    );
}

#[test]
fn bias_variance_trivial_cases() {
    let mean = Mat::from_row_slice(2, 1, &[1.0, 2.0]);
    let targets = mean.clone();
    let zero_cov = predictor_covariance_zero(2, 1);
    let bv = bias_variance(&mean, &zero_cov, &targets).unwrap();
    assert_eq!(bv.bias, 0.0);
    // The helper covariance is numerically (not bitwise) zero.
    assert!(bv.variance.abs() < 1e-10);
    assert!((bv.total() - bv.bias - bv.variance).abs() == 0.0);
}

fn predictor_covariance_zero(points: usize, outputs: usize) -> widthfx_core::predictor::PredictorCovariance {
    // Zero covariance via the limit route on orthogonal data would be
    // convoluted; build a trivial one through the public API instead.
    let mut rng = stream_rng(406, 0);
    let x = normal_matrix(&mut rng, points, 6);
    let y = normal_matrix(&mut rng, points, outputs);
    let ts = TestSet::new(
        Dataset::new(x.clone(), y.clone()).unwrap(),
        Dataset::new(x, y).unwrap(),
        6,
    )
    .unwrap();
    let profile = WidthProfile::new(vec![usize::MAX / 2], outputs, vec![1.0, 1.0]).unwrap();
    // Train covariance at huge beta is numerically zero.
    let temp = TemperatureParams::new(1e12, 1.0).unwrap();
    predictor_covariance(&ts, &profile, &temp).unwrap().train
}

#[test]
fn predictor_mean_shift_matches_importance_oracle() {
    // d = 2 linear, modest width: the O(1/n) shift of the mean predictor is
    // resolvable by the readout-marginalized importance estimator.
    let p = 4;
    let p_hat = 3;
    let n0 = 6;
    let n1 = 48usize;
    let ts = make_testset(p, p_hat, n0, 2, 407);
    let profile = WidthProfile::new(vec![n1], 2, vec![1.0, 1.0]).unwrap();
    let temp = TemperatureParams::new(1.0, 1.0).unwrap();
    let theory = predictor_mean(&ts, &profile, &temp).unwrap();

    let config = NetworkConfig::new(Architecture::MlpLinear, profile).unwrap();
    let opts = ImportanceOptions {
        predictor: true,
        train_predictor: true,
        ..Default::default()
    };
    let est = importance_oracle(
        &config,
        ts.train(),
        &temp,
        600_000,
        408,
        &opts,
        Some(ts.test()),
    )
    .unwrap();
    let em = est.predictor_mean.as_ref().unwrap();
    let se = est.predictor_se.as_ref().unwrap();
    for mu in 0..p_hat {
        for j in 0..2 {
            let d = (em[(mu, j)] - theory.test[(mu, j)]).abs();
            // Theory is O(1/n^2) accurate; allow that on top of the SE.
            let slack = 3.0 * se[(mu, j)] + 2e-4;
            assert!(d <= slack, "({mu},{j}): {d:.2e} vs {slack:.2e}");
        }
    }
    let etm = est.train_predictor_mean.as_ref().unwrap();
    let tse = est.train_predictor_se.as_ref().unwrap();
    for mu in 0..p {
        for j in 0..2 {
            let d = (etm[(mu, j)] - theory.train[(mu, j)]).abs();
            assert!(d <= 3.0 * tse[(mu, j)] + 2e-4, "train ({mu},{j}): {d:.2e}");
        }
    }
}

#[test]
fn predictor_covariance_matches_importance_oracle() {
    let p = 3;
    let p_hat = 2;
    let n1 = 64usize;
    let ts = make_testset(p, p_hat, 5, 2, 409);
    let profile = WidthProfile::new(vec![n1], 2, vec![1.0, 1.0]).unwrap();
    let temp = TemperatureParams::new(1.0, 1.0).unwrap();
    let theory = predictor_covariance(&ts, &profile, &temp).unwrap();
    let config = NetworkConfig::new(Architecture::MlpLinear, profile).unwrap();
    let opts = ImportanceOptions {
        predictor: true,
        predictor_covariance: true,
        ..Default::default()
    };
    let est = importance_oracle(
        &config,
        ts.train(),
        &temp,
        400_000,
        410,
        &opts,
        Some(ts.test()),
    )
    .unwrap();
    let (cov, se) = est.predictor_cov.as_ref().unwrap();
    for i in 0..p_hat * 2 {
        for j in 0..p_hat * 2 {
            let want = theory.test.flat()[(i, j)];
            let d = (cov[(i, j)] - want).abs();
            let slack = 3.0 * se[(i, j)] + 5e-4;
            assert!(d <= slack, "({i},{j}): {d:.2e} vs slack {slack:.2e}");
        }
    }
}

#[test]
fn width_benefit_sign_matches_numerical_derivative() {
    // Compare the verdict against the numerically differentiated
    // zero-temperature test variance on random instances.
    let mut pass = 0;
    for seed in 0..8u64 {
        let ts = make_testset(4, 3, 8, 2, 500 + seed);
        let sigma = 0.85 + 0.1 * seed as f64 / 8.0;
        let profile = WidthProfile::new(vec![64, 64], 2, vec![sigma, 1.0, 1.0]).unwrap();
        let verdict =
            width_benefit_condition(ts.gxx(), ts.gyy(), &profile).unwrap();
        let limit = TemperatureParams::zero_temperature_limit(1.0).unwrap();
        let ev = |widths: Vec<usize>| -> f64 {
            let prof = WidthProfile::new(widths, 2, vec![sigma, 1.0, 1.0]).unwrap();
            let cov = predictor_covariance(&ts, &prof, &limit).unwrap();
            bias_variance(
                &predictor_mean(&ts, &prof, &limit).unwrap().test,
                &cov.test,
                ts.test().y(),
            )
            .unwrap()
            .variance
        };
        let narrow = ev(vec![64, 64]);
        let wide = ev(vec![128, 128]);
        let improves = wide < narrow;
        let agrees = match verdict {
            WidthBenefit::Improves => improves,
            WidthBenefit::Worsens => !improves,
            WidthBenefit::Marginal => true,
        };
        if agrees {
            pass += 1;
        }
    }
    assert_eq!(pass, 8);
}

#[test]
fn implicit_recurrence_matches_first_order_and_scales() {
    let mut rng = stream_rng(411, 0);
    let x = normal_matrix(&mut rng, 3, 8);
    let y = normal_matrix(&mut rng, 3, 6);
    let gxx = GramMatrix::from_samples(&x, 8).unwrap();
    let gyy = GramMatrix::from_samples(&y, 6).unwrap();
    let n_d = 2usize;

    let mut gaps = Vec::new();
    for n in [5_000usize, 10_000] {
        let sol = solve_implicit_kernel_recurrence(&gxx, &gyy, &[n, n, n], n_d, 1e-10, 10_000)
            .unwrap();
        assert!(sol.residual <= 1e-10, "residual {:.2e}", sol.residual);
        // First-order prediction (unit variances).
        let mut worst_gap = 0.0f64;
        for (l, k) in sol.kernels.iter().enumerate() {
            let wf = n_d as f64 * (l + 1) as f64 / n as f64;
            let pred = gxx.entries() + wf * (gyy.entries() - gxx.entries());
            worst_gap = worst_gap.max(mat::frobenius(&(k - pred)));
        }
        gaps.push(worst_gap);

        // Coefficient identity: fitted first-order coefficient recovers
        // n_d * sum_{l'<=l} 1/n_l'.
        let dir = gyy.entries() - gxx.entries();
        let denom = mat::frobenius(&dir).powi(2);
        for (l, k) in sol.kernels.iter().enumerate() {
            let fitted = ((k - gxx.entries()).component_mul(&dir)).sum() / denom;
            let want = n_d as f64 * (l + 1) as f64 / n as f64;
            assert!(
                (fitted - want).abs() <= 1e-2 * want,
                "layer {} fitted {fitted:.6e} vs {want:.6e}",
                l + 1
            );
        }
    }
    let ratio = gaps[0] / gaps[1];
    assert!((ratio - 4.0).abs() <= 0.8, "gap ratio {ratio}");
}

#[test]
fn proportional_regime_consistency() {
    let mut rng = stream_rng(412, 0);
    let x = normal_matrix(&mut rng, 4, 9);
    let y = normal_matrix(&mut rng, 4, 2);
    let gxx = GramMatrix::from_samples(&x, 9).unwrap();
    let gyy = GramMatrix::from_samples(&y, 2).unwrap();
    let sigma_sq = 1.0;
    let depth = 3usize;
    let n = 20_000usize;
    let n_d = 2usize;
    let layer = 2usize;

    // alpha -> 0: roots approach 1 and the normalized kernel approaches the
    // first-order interpolation.
    let tiny = proportional_regime_kernel(&gxx, &gyy, sigma_sq, depth, 1e-8, n, n_d, layer)
        .unwrap();
    assert!(tiny.root_residual <= 1e-12);
    for &z in &tiny.roots {
        assert!((z - 1.0).abs() < 1e-6, "z {z}");
    }

    let eq9 = |nn: f64| -> Mat {
        gxx.entries()
            + (n_d as f64 * layer as f64 / nn) * (gyy.entries() - gxx.entries())
    };
    let mut diffs = Vec::new();
    for &alpha in &[0.02, 0.01] {
        let k = proportional_regime_kernel(&gxx, &gyy, sigma_sq, depth, alpha, n, n_d, layer)
            .unwrap();
        assert!(k.root_residual <= 1e-12, "residual {:.2e}", k.root_residual);
        diffs.push(mat::frobenius(&(&k.normalized - eq9(n as f64))));
    }
    let ratio = diffs[0] / diffs[1];
    assert!((ratio - 2.0).abs() <= 0.3, "alpha halving ratio {ratio}");
}
