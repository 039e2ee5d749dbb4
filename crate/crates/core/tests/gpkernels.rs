//! Monte-Carlo-over-prior oracles and structural properties for the
//! infinite-width kernels.

use widthfx_core::gpkernels::{
    cnn_linear_gp, mlp_linear_gp, readout_kernel, single_layer_gp, skip_gp_scale, ActivationSpec,
    FilterSpec, FourIndexKernel, ReadoutStrategy, SkipConnectivity, SpatialShape, WidthProfile,
};
use widthfx_core::mat::{self, Mat};
use widthfx_core::mathcore::GramMatrix;
use widthfx_core::rng::{normal_matrix, standard_normal, stream_rng};
use widthfx_core::sampler::{forward, Architecture, ChainState, NetworkConfig};

fn mean_and_se(batch_means: &[Mat]) -> (Mat, Mat) {
    let b = batch_means.len();
    let mean = batch_means
        .iter()
        .fold(Mat::zeros(batch_means[0].nrows(), batch_means[0].ncols()), |a, m| a + m)
        / b as f64;
    let mut var = Mat::zeros(mean.nrows(), mean.ncols());
    for m in batch_means {
        let d = m - &mean;
        var += d.component_mul(&d);
    }
    var /= (b - 1) as f64 * b as f64;
    (mean, var.map(f64::sqrt))
}

fn assert_within_3se(got: &Mat, se: &Mat, want: &Mat, context: &str) {
    for i in 0..got.nrows() {
        for j in 0..got.ncols() {
            let d = (got[(i, j)] - want[(i, j)]).abs();
            let bound = 3.0 * se[(i, j)] + 1e-12;
            assert!(
                d <= bound,
                "{context}: entry ({i},{j}) off by {d:.3e} > 3se {bound:.3e}"
            );
        }
    }
}

/// Weight-space prior draws of every layer kernel via the real forward pass.
fn weight_space_prior_mean(
    config: &NetworkConfig,
    x: &Mat,
    draws: usize,
    seed: u64,
) -> Vec<(Mat, Mat)> {
    let batches = 16;
    let per = draws / batches;
    let mut batch_means: Vec<Vec<Mat>> = Vec::new();
    let mut draw_id = 0u64;
    for _ in 0..batches {
        let mut sums: Option<Vec<Mat>> = None;
        for _ in 0..per {
            let state = ChainState::init(config, x.ncols(), seed, draw_id).unwrap();
            draw_id += 1;
            let pass = forward(config, &state.params, x).unwrap();
            match sums.as_mut() {
                Some(s) => {
                    for (acc, k) in s.iter_mut().zip(&pass.kernels) {
                        *acc += k;
                    }
                }
                None => sums = Some(pass.kernels.clone()),
            }
        }
        batch_means
            .push(sums.unwrap().into_iter().map(|m| m / per as f64).collect());
    }
    let layers = batch_means[0].len();
    (0..layers)
        .map(|l| {
            let per_layer: Vec<Mat> = batch_means.iter().map(|b| b[l].clone()).collect();
            mean_and_se(&per_layer)
        })
        .collect()
}

#[test]
fn mlp_gp_trivial_scalings() {
    let mut rng = stream_rng(1, 0);
    let x = normal_matrix(&mut rng, 3, 6);
    let gxx = GramMatrix::from_samples(&x, 6).unwrap();
    let unit = WidthProfile::new(vec![8, 8], 2, vec![1.0, 1.0, 1.0]).unwrap();
    for l in 1..=2 {
        let k = mlp_linear_gp(&gxx, &unit, l).unwrap();
        assert_eq!(k.entries(), gxx.entries());
    }
    let scaled = WidthProfile::new(vec![8, 8], 2, vec![2.0, 3.0, 1.0]).unwrap();
    let k2 = mlp_linear_gp(&gxx, &scaled, 2).unwrap();
    assert!(mat::frobenius(&(k2.entries() - 6.0 * gxx.entries())) < 1e-12);
    assert!(mlp_linear_gp(&gxx, &scaled, 3).is_err());
}

#[test]
fn mlp_gp_matches_weight_space_prior_mean() {
    let mut rng = stream_rng(2, 0);
    let x = normal_matrix(&mut rng, 3, 5);
    let gxx = GramMatrix::from_samples(&x, 5).unwrap();
    let profile = WidthProfile::new(vec![40, 24], 2, vec![1.4, 0.6, 1.0]).unwrap();
    let config = NetworkConfig::new(Architecture::MlpLinear, profile.clone()).unwrap();
    let stats = weight_space_prior_mean(&config, &x, 20_000, 77);
    for (l, (mean, se)) in stats.iter().enumerate() {
        let want = mlp_linear_gp(&gxx, &profile, l + 1).unwrap();
        assert_within_3se(mean, se, want.entries(), &format!("layer {}", l + 1));
    }
}

fn cnn_setup(
    p: usize,
    channels: usize,
    s: usize,
    widths: Vec<usize>,
    variances: Vec<f64>,
    seed: u64,
) -> (Mat, FourIndexKernel, Vec<FilterSpec>, WidthProfile, NetworkConfig) {
    let mut rng = stream_rng(seed, 0);
    let x = normal_matrix(&mut rng, p, channels * s);
    let shape = SpatialShape::one_d(s).unwrap();
    let tensor = FourIndexKernel::gram_from_inputs(&x, channels, shape.clone()).unwrap();
    let depth = widths.len() + 1;
    let filters: Vec<FilterSpec> = (0..depth - 1).map(|_| FilterSpec::uniform(1, 1)).collect();
    let profile = WidthProfile::new(widths, 2, variances).unwrap();
    let config = NetworkConfig::new(Architecture::CnnLinear { spatial: shape }, profile.clone())
        .unwrap()
        .with_filters(filters.clone())
        .unwrap();
    (x, tensor, filters, profile, config)
}

#[test]
fn cnn_gp_matches_weight_space_prior_mean() {
    let (x, tensor, filters, profile, config) =
        cnn_setup(2, 3, 6, vec![512], vec![1.2, 1.0], 5);
    let stats = weight_space_prior_mean(&config, &x, 20_000, 78);
    let want = cnn_linear_gp(&tensor, &filters, &profile, 1).unwrap();
    assert_within_3se(&stats[0].0, &stats[0].1, want.flat(), "cnn layer 1");
}

#[test]
fn cnn_s1_reduces_to_mlp() {
    let mut rng = stream_rng(6, 0);
    let x = normal_matrix(&mut rng, 4, 7);
    let gxx = GramMatrix::from_samples(&x, 7).unwrap();
    let tensor = FourIndexKernel::from_flat(&gxx).unwrap();
    let filters = vec![FilterSpec::uniform(0, 1), FilterSpec::uniform(0, 1)];
    let profile = WidthProfile::new(vec![16, 16], 2, vec![1.3, 0.8, 1.0]).unwrap();
    for l in 1..=2 {
        let cnn = cnn_linear_gp(&tensor, &filters, &profile, l).unwrap();
        let mlp = mlp_linear_gp(&gxx, &profile, l).unwrap();
        let rel = mat::frobenius(&(cnn.flat() - mlp.entries())) / mat::frobenius(mlp.entries());
        assert!(rel <= 1e-12, "layer {l} rel {rel}");
        let ro = readout_kernel(&cnn, &ReadoutStrategy::Vectorization).unwrap();
        assert!(mat::frobenius(&(ro.entries() - mlp.entries())) < 1e-12);
    }
}

#[test]
fn cnn_spatially_constant_inputs_collapse() {
    // Inputs constant over space: every (a, b) block equals the flat Gram.
    let p = 3;
    let channels = 4;
    let s = 5;
    let mut rng = stream_rng(7, 0);
    let base = normal_matrix(&mut rng, p, channels);
    let mut x = Mat::zeros(p, channels * s);
    for mu in 0..p {
        for i in 0..channels {
            for a in 0..s {
                x[(mu, i * s + a)] = base[(mu, i)];
            }
        }
    }
    let shape = SpatialShape::one_d(s).unwrap();
    let tensor = FourIndexKernel::gram_from_inputs(&x, channels, shape).unwrap();
    let filters = vec![FilterSpec::uniform(2, 1)];
    let profile = WidthProfile::new(vec![8], 1, vec![1.7, 1.0]).unwrap();
    let k = cnn_linear_gp(&tensor, &filters, &profile, 1).unwrap();
    let flat_gram = GramMatrix::from_samples(&base, channels).unwrap();
    for mu in 0..p {
        for nu in 0..p {
            for a in 0..s {
                for b in 0..s {
                    let want = 1.7 * flat_gram.entries()[(mu, nu)];
                    assert!((k.get(mu, nu, a, b) - want).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn cnn_shift_equivariance() {
    let (x, _, filters, profile, _) = cnn_setup(3, 2, 6, vec![4, 4], vec![1.1, 0.9, 1.0], 8);
    let shape = SpatialShape::one_d(6).unwrap();
    let tensor = FourIndexKernel::gram_from_inputs(&x, 2, shape.clone()).unwrap();
    let k = cnn_linear_gp(&tensor, &filters, &profile, 2).unwrap();

    //

    // Shift all inputs by two sites.
    let shift = 2usize;
    let mut xs = Mat::zeros(x.nrows(), x.ncols());
    for mu in 0..x.nrows() {
        for i in 0..2 {
            for a in 0..6 {
                xs[(mu, i * 6 + (a + shift) % 6)] = x[(mu, i * 6 + a)];
            }
        }
    }
    let tensor_s = FourIndexKernel::gram_from_inputs(&xs, 2, shape).unwrap();
    let ks = cnn_linear_gp(&tensor_s, &filters, &profile, 2).unwrap();
    for mu in 0..3 {
        for nu in 0..3 {
            for a in 0..6 {
                for b in 0..6 {
                    let want = k.get(mu, nu, a, b);
                    let got = ks.get(mu, nu, (a + shift) % 6, (b + shift) % 6);
                    assert!((got - want).abs() <= 1e-12, "({mu},{nu},{a},{b})");
                }
            }
        }
    }
}

#[test]
fn readout_kernel_variants() {
    let (_, tensor, filters, profile, _) = cnn_setup(3, 2, 4, vec![8], vec![1.0, 1.0], 9);
    let k = cnn_linear_gp(&tensor, &filters, &profile, 1).unwrap();
    let vec_ro = readout_kernel(&k, &ReadoutStrategy::Vectorization).unwrap();
    // Direct-summation oracle for vectorization.
    for mu in 0..3 {
        for nu in 0..3 {
            let mut acc = 0.0;
            for a in 0..4 {
                acc += k.get(mu, nu, a, a);
            }
            assert!((vec_ro.entries()[(mu, nu)] - acc / 4.0).abs() < 1e-14);
        }
    }
    // GAP on a spatially constant kernel equals vectorization.
    let const_k = {
        let mut rng = stream_rng(10, 0);
        let base = normal_matrix(&mut rng, 3, 5);
        let g = GramMatrix::from_samples(&base, 5).unwrap();
        let mut m = Mat::zeros(12, 12);
        for mu in 0..3 {
            for nu in 0..3 {
                for a in 0..4 {
                    for b in 0..4 {
                        m[(mu * 4 + a, nu * 4 + b)] = g.entries()[(mu, nu)];
                    }
                }
            }
        }
        FourIndexKernel::new(m, 3, SpatialShape::one_d(4).unwrap()).unwrap()
    };
    let gap = readout_kernel(&const_k, &ReadoutStrategy::global_average_pooling(4)).unwrap();
    let vect = readout_kernel(&const_k, &ReadoutStrategy::Vectorization).unwrap();
    assert!(mat::frobenius(&(gap.entries() - vect.entries())) < 1e-12);
    // Wrong projection length is rejected.
    assert!(readout_kernel(&const_k, &ReadoutStrategy::Projection(vec![1.0; 3])).is_err());
}

#[test]
fn single_layer_identity_and_quadratic() {
    let mut rng = stream_rng(12, 0);
    let x = normal_matrix(&mut rng, 3, 8);
    let gxx = GramMatrix::from_samples(&x, 8).unwrap();
    let s1 = 1.3;
    let id = single_layer_gp(&gxx, s1, &ActivationSpec::Identity).unwrap();
    assert!(
        mat::frobenius(&(id.kernel.entries() - s1 * gxx.entries()))
            <= 1e-12 * mat::frobenius(gxx.entries())
    );

    // phi(x) = x^2 on unit diagonal G_xx: K_mumu = 3 sigma^4, K_munu = sigma^4.
    let eye = GramMatrix::new(Mat::identity(3, 3), 1).unwrap();
    let quad = ActivationSpec::polynomial(vec![0.0, 0.0, 1.0]).unwrap();
    let k = single_layer_gp(&eye, s1, &quad).unwrap();
    for mu in 0..3 {
        for nu in 0..3 {
            let want = if mu == nu { 3.0 * s1 * s1 } else { s1 * s1 };
            assert!((k.kernel.entries()[(mu, nu)] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn single_layer_erf_matches_crude_monte_carlo() {
    let mut rng = stream_rng(13, 0);
    let x = normal_matrix(&mut rng, 3, 6);
    let gxx = GramMatrix::from_samples(&x, 6).unwrap();
    let s1 = 0.8;
    let est = single_layer_gp(&gxx, s1, &ActivationSpec::Erf).unwrap();

    // Independent 1e7-draw crude MC oracle.
    let factor = mat::psd_factor(&(s1 * gxx.entries()), 1e-12);
    let batches = 20;
    let per = 500_000usize;
    let mut batch_means = Vec::new();
    let mut rng2 = stream_rng(14, 0);
    for _ in 0..batches {
        let mut acc = Mat::zeros(3, 3);
        for _ in 0..per {
            let z: Vec<f64> = (0..factor.ncols()).map(|_| standard_normal(&mut rng2)).collect();
            let mut h = [0.0f64; 3];
            for (i, hi) in h.iter_mut().enumerate() {
                for k in 0..factor.ncols() {
                    *hi += factor[(i, k)] * z[k];
                }
            }
            let phi: Vec<f64> = h.iter().map(|&v| libm::erf(v)).collect();
            for i in 0..3 {
                for j in 0..3 {
                    acc[(i, j)] += phi[i] * phi[j];
                }
            }
        }
        batch_means.push(acc / per as f64);
    }
    let (mc, mc_se) = mean_and_se(&batch_means);
    // Combined SE: MC oracle plus the quadrature's own estimate.
    for i in 0..3 {
        for j in 0..3 {
            let se = (mc_se[(i, j)] * mc_se[(i, j)] + est.se[(i, j)] * est.se[(i, j)]).sqrt();
            let d = (mc[(i, j)] - est.kernel.entries()[(i, j)]).abs();
            assert!(d <= 3.0 * se + 1e-12, "({i},{j}): d {d:.2e}, se {se:.2e}");
        }
    }
}

#[test]
fn kernel_scaling_in_input_gram() {
    let mut rng = stream_rng(15, 0);
    let x = normal_matrix(&mut rng, 3, 6);
    let gxx = GramMatrix::from_samples(&x, 6).unwrap();
    let scaled = gxx.scaled(2.5).unwrap();
    let profile = WidthProfile::new(vec![4], 1, vec![1.4, 1.0]).unwrap();
    let a = mlp_linear_gp(&gxx, &profile, 1).unwrap();
    let b = mlp_linear_gp(&scaled, &profile, 1).unwrap();
    assert!(mat::frobenius(&(b.entries() - 2.5 * a.entries())) < 1e-12);
}

#[test]
fn skip_gp_scale_matches_weight_space_prior() {
    // d = 4 DAG with chain edges plus input->2 and 1->3 skips.
    let sigma_sq = vec![
        vec![1.0],
        vec![0.5, 1.2],
        vec![0.0, 0.7, 0.9],
        vec![0.0, 0.0, 0.0, 1.0],
    ];
    let conn = SkipConnectivity::new(sigma_sq).unwrap();
    let profile = WidthProfile::new(vec![48, 48, 48], 2, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
    let mut rng = stream_rng(16, 0);
    let x = normal_matrix(&mut rng, 3, 5);
    let gxx = GramMatrix::from_samples(&x, 5).unwrap();
    let config = NetworkConfig::new(Architecture::MlpLinear, profile)
        .unwrap()
        .with_skip(conn.clone())
        .unwrap();
    let stats = weight_space_prior_mean(&config, &x, 20_000, 79);
    for l in 1..=3 {
        let scale = skip_gp_scale(&conn, l, l - 1).unwrap();
        let want = scale * gxx.entries();
        assert_within_3se(&stats[l - 1].0, &stats[l - 1].1, &want, &format!("skip layer {l}"));
    }
}
