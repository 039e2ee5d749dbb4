//! Config-driven experiment runner: theory kernels plus requested empirical
//! estimators per sweep width, with machine-readable reports.

use crate::config::{
    parse_activation, AcceptCheck, ArchKind, EstimatorKind, ExperimentConfig, TaskSource,
};
use crate::data::{build_task, downsample, load_idx, synthetic_task, SampleOrdering, Teacher};
use crate::error::{AppError, Result};
use crate::fit::{fit_power_law, PowerLawFit};
use crate::par::run_chains_parallel;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use std::io::Write;
use std::path::Path;
use widthfx_core::corrections::{
    cnn_kernel_shift, deep_linear_kernel_shift, single_layer_posterior_kernel, SingleLayerRoute,
    TemperatureParams,
};
use widthfx_core::gpkernels::{
    cnn_linear_gp, deep_gp_kernel, mlp_linear_gp, ActivationSpec, FilterSpec, ReadoutStrategy,
    SpatialShape, WidthProfile,
};
use widthfx_core::mathcore::GramMatrix;
use widthfx_core::sampler::{
    importance_oracle, Architecture, CnnReadout, Dataset, ImportanceOptions, LangevinSchedule,
    NetworkConfig,
};

type Mat = DMatrix<f64>;

#[derive(Debug, Clone, Serialize)]
pub struct TheoryRow {
    pub width: usize,
    pub layer: usize,
    pub k_inf_frobenius: f64,
    /// Frobenius norm of the predicted O(1/n) shift; absent where no closed
    /// form exists (deep nonlinear networks).
    pub theory_shift_frobenius: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateRow {
    pub width: usize,
    pub layer: usize,
    pub estimator: &'static str,
    /// `||<K>_emp - K_inf||_F`.
    pub deviation_frobenius: f64,
    pub deviation_se: f64,
    /// Relative Frobenius error of the empirical deviation against the
    /// theory shift, when a theory shift exists.
    pub rel_error_vs_theory: Option<f64>,
    pub ess: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SlopeRow {
    pub estimator: &'static str,
    pub layer: usize,
    pub fit: PowerLawFit,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellError {
    pub width: usize,
    pub estimator: &'static str,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub config: ExperimentConfig,
    pub theory: Vec<TheoryRow>,
    pub estimates: Vec<EstimateRow>,
    pub slopes: Vec<SlopeRow>,
    pub checks: Vec<CheckResult>,
    pub errors: Vec<CellError>,
    pub warnings: Vec<String>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub report: Report,
    /// 0 success, 3 failed acceptance checks, 4 estimator divergence.
    pub exit_code: i32,
}

struct ScatterPoint {
    width: usize,
    layer: usize,
    estimator: &'static str,
    row: usize,
    col: usize,
    theory_shift: Option<f64>,
    empirical_shift: f64,
    se: f64,
}

struct WidthResult {
    theory: Vec<TheoryRow>,
    estimates: Vec<EstimateRow>,
    scatter: Vec<ScatterPoint>,
    errors: Vec<CellError>,
    warnings: Vec<String>,
}

struct Instance {
    net: NetworkConfig,
    /// Per reported layer: infinite-width kernel (flattened for CNNs) and
    /// the predicted posterior shift where available.
    k_inf: Vec<Mat>,
    shift: Vec<Option<Mat>>,
    layers: Vec<usize>,
}

fn splitmix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Build the training (and optional test) data for the task section.
pub fn build_data(config: &ExperimentConfig) -> Result<(Dataset, Option<Dataset>, GramMatrix, GramMatrix)> {
    match &config.task.source {
        TaskSource::Synthetic { seed, n0, teacher } => {
            let teacher = match teacher.as_str() {
                "random-linear" => Teacher::RandomLinear,
                "random-rotation" => Teacher::RandomRotation,
                other => {
                    return Err(AppError::Config(format!("unknown task.teacher `{other}`")));
                }
            };
            let sites: usize = config.architecture.spatial.iter().product::<usize>().max(1);
            let cols = n0 * sites;
            let total = config.task.p + config.task.test_p;
            let task = synthetic_task(*seed, cols, total, config.task.n_d, &teacher)?;
            let x = task.dataset.x();
            let y = task.dataset.y();
            let train = Dataset::new(
                x.rows(0, config.task.p).into_owned(),
                y.rows(0, config.task.p).into_owned(),
            )?;
            let test = if config.task.test_p > 0 {
                Some(Dataset::new(
                    x.rows(config.task.p, config.task.test_p).into_owned(),
                    y.rows(config.task.p, config.task.test_p).into_owned(),
                )?)
            } else {
                None
            };
            let gxx = train.gxx(*n0)?;
            let gyy = train.gyy()?;
            Ok((train, test, gxx, gyy))
        }
        TaskSource::Idx { images, labels, downsample_to } => {
            let imgs = load_idx(images)?;
            let lbls = load_idx(labels)?;
            if !imgs.is_images() || lbls.is_images() {
                return Err(AppError::Config(
                    "task.images must be an image file and task.labels a label file".into(),
                ));
            }
            let (n, rows, cols) = (imgs.shape()[0], imgs.shape()[1], imgs.shape()[2]);
            let floats = imgs.unit_floats();
            let side = downsample_to.unwrap_or(rows);
            let dim = side * side;
            let mut flattened = Mat::zeros(n, dim);
            for i in 0..n {
                let img = Mat::from_fn(rows, cols, |r, c| floats[i * rows * cols + r * cols + c]);
                let small = if side == rows && rows == cols {
                    img
                } else {
                    downsample(&img, side)?
                };
                for r in 0..side {
                    for c in 0..side {
                        flattened[(i, r * side + c)] = small[(r, c)];
                    }
                }
            }
            let built = build_task(&flattened, &lbls.labels(), config.task.p, SampleOrdering::ByClass)?;
            Ok((built.dataset, None, built.gxx, built.gyy))
        }
    }
}

fn hidden_widths(config: &ExperimentConfig, width: usize) -> Vec<usize> {
    let count = config.architecture.depth - 1;
    let mut widths = vec![width; count];
    if let Some(b) = config.sweep.bottleneck {
        if count >= 2 {
            widths[count / 2] = b;
        }
    }
    widths
}

fn reported_layers(config: &ExperimentConfig) -> Vec<usize> {
    if config.sweep.layers.is_empty() {
        (1..config.architecture.depth).collect()
    } else {
        config.sweep.layers.clone()
    }
}

/// Network plus theory kernels for one sweep width.
fn build_instance(
    config: &ExperimentConfig,
    train: &Dataset,
    gxx: &GramMatrix,
    gyy: &GramMatrix,
    temp: &TemperatureParams,
    width: usize,
) -> Result<Instance> {
    let profile = WidthProfile::new(
        hidden_widths(config, width),
        config.task.n_d,
        config.architecture.sigma_sq.clone(),
    )?;
    let layers = reported_layers(config);
    for &l in &layers {
        if l == 0 || l >= config.architecture.depth {
            return Err(AppError::Config(format!("sweep.layers entry {l} out of range")));
        }
    }
    let (net, k_inf, shift) = match config.architecture.kind {
        ArchKind::MlpLinear => {
            let net = NetworkConfig::new(Architecture::MlpLinear, profile.clone())?;
            let mut k_inf = Vec::new();
            let mut shift = Vec::new();
            for &l in &layers {
                k_inf.push(mlp_linear_gp(gxx, &profile, l)?.entries().clone());
                shift.push(Some(deep_linear_kernel_shift(gxx, gyy, &profile, temp, l)?));
            }
            (net, k_inf, shift)
        }
        ArchKind::CnnLinear1d | ArchKind::CnnLinear2d => {
            let spatial = SpatialShape::new(config.architecture.spatial.clone())
                .map_err(AppError::Core)?;
            let axes = spatial.axes();
            let filters: Vec<FilterSpec> = (1..config.architecture.depth)
                .map(|_| FilterSpec::uniform(config.architecture.filter_half_width, axes))
                .collect();
            let readout = match config.architecture.readout.as_str() {
                "vectorization" => CnnReadout::Vectorization,
                "gap" => CnnReadout::GlobalAveragePooling,
                other => {
                    return Err(AppError::Config(format!("unknown readout `{other}`")));
                }
            };
            let strategy = match readout {
                CnnReadout::Vectorization => ReadoutStrategy::Vectorization,
                CnnReadout::GlobalAveragePooling => {
                    ReadoutStrategy::global_average_pooling(spatial.size())
                }
            };
            let net = NetworkConfig::new(
                Architecture::CnnLinear { spatial: spatial.clone() },
                profile.clone(),
            )?
            .with_filters(filters.clone())?
            .with_readout(readout);
            let tensor = train.gxx_tensor(&net)?;
            let mut k_inf = Vec::new();
            let mut shift = Vec::new();
            for &l in &layers {
                k_inf.push(cnn_linear_gp(&tensor, &filters, &profile, l)?.flat().clone());
                shift.push(Some(cnn_kernel_shift(
                    &tensor, gyy, &filters, &profile, temp, l, &strategy,
                )?));
            }
            (net, k_inf, shift)
        }
        ArchKind::MlpRelu => {
            let net = NetworkConfig::new(Architecture::MlpRelu, profile.clone())?;
            let mut k_inf = Vec::new();
            let mut shift = Vec::new();
            for &l in &layers {
                let k = deep_gp_kernel(gxx, &profile, &ActivationSpec::Relu, l)?;
                k_inf.push(k.kernel.entries().clone());
                shift.push(None);
            }
            (net, k_inf, shift)
        }
        ArchKind::SingleNonlinear => {
            let act = parse_activation(
                config
                    .architecture
                    .activation
                    .as_deref()
                    .ok_or_else(|| AppError::Config("single-nonlinear needs architecture.activation".into()))?,
            )?;
            let net = NetworkConfig::new(Architecture::SingleNonlinear(act.clone()), profile.clone())?;
            let post = single_layer_posterior_kernel(
                gxx,
                gyy,
                profile.sigma_sq(1),
                &act,
                temp,
                profile.width(1),
                profile.output_width(),
                SingleLayerRoute::Auto,
            )?;
            let k_inf_k =
                widthfx_core::gpkernels::single_layer_gp(gxx, profile.sigma_sq(1), &act)?;
            let shift_m = post.kernel.entries() - k_inf_k.kernel.entries();
            (net, vec![k_inf_k.kernel.entries().clone()], vec![Some(shift_m)])
        }
    };
    Ok(Instance { net, k_inf, shift, layers })
}

fn frobenius(m: &Mat) -> f64 {
    m.norm()
}

/// Delta-method SE of `||dev||_F` from entrywise SEs.
fn norm_se(dev: &Mat, se: &Mat) -> f64 {
    let norm = frobenius(dev);
    if norm <= 1e-300 {
        return se.iter().map(|s| s * s).sum::<f64>().sqrt();
    }
    (dev.component_mul(se).iter().map(|v| v * v).sum::<f64>()).sqrt() / norm
}

fn estimate_rows(
    width: usize,
    estimator: &'static str,
    instance: &Instance,
    kernel_mean: &[Mat],
    kernel_se: &[Mat],
    ess: Option<f64>,
    scatter: &mut Vec<ScatterPoint>,
) -> Vec<EstimateRow> {
    let mut rows = Vec::new();
    for (slot, &layer) in instance.layers.iter().enumerate() {
        // Estimator kernels are indexed by hidden layer; reported layers map
        // onto them 1-based.
        let dev = &kernel_mean[layer - 1] - &instance.k_inf[slot];
        let se = &kernel_se[layer - 1];
        let rel = instance.shift[slot].as_ref().map(|shift| {
            frobenius(&(&dev - shift)) / frobenius(shift).max(1e-300)
        });
        for r in 0..dev.nrows() {
            for c in 0..dev.ncols() {
                scatter.push(ScatterPoint {
                    width,
                    layer,
                    estimator,
                    row: r,
                    col: c,
                    theory_shift: instance.shift[slot].as_ref().map(|s| s[(r, c)]),
                    empirical_shift: dev[(r, c)],
                    se: se[(r, c)],
                });
            }
        }
        rows.push(EstimateRow {
            width,
            layer,
            estimator,
            deviation_frobenius: frobenius(&dev),
            deviation_se: norm_se(&dev, se),
            rel_error_vs_theory: rel,
            ess,
        });
    }
    rows
}

fn run_width(
    config: &ExperimentConfig,
    train: &Dataset,
    test: Option<&Dataset>,
    gxx: &GramMatrix,
    gyy: &GramMatrix,
    temp: &TemperatureParams,
    width: usize,
) -> Result<WidthResult> {
    let instance = build_instance(config, train, gxx, gyy, temp, width)?;
    let mut out = WidthResult {
        theory: Vec::new(),
        estimates: Vec::new(),
        scatter: Vec::new(),
        errors: Vec::new(),
        warnings: Vec::new(),
    };
    // Gamma is positive definite at finite temperature but can be
    // ill-conditioned at large beta; surface that as a warning.
    if config.architecture.kind == ArchKind::MlpLinear {
        let profile = WidthProfile::new(
            hidden_widths(config, width),
            config.task.n_d,
            config.architecture.sigma_sq.clone(),
        )?;
        let d = profile.depth();
        if let Ok(k_last) = mlp_linear_gp(gxx, &profile, d - 1) {
            if let Ok(phi) = widthfx_core::corrections::phi_operator(&k_last, gyy, temp) {
                if phi.gamma_condition() > 1e12 {
                    out.warnings.push(format!(
                        "width {width}: Gamma condition number {:.3e} exceeds 1e12",
                        phi.gamma_condition()
                    ));
                }
            }
        }
    }
    for (slot, &layer) in instance.layers.iter().enumerate() {
        out.theory.push(TheoryRow {
            width,
            layer,
            k_inf_frobenius: frobenius(&instance.k_inf[slot]),
            theory_shift_frobenius: instance.shift[slot].as_ref().map(frobenius),
        });
    }

    for estimator in &config.estimators {
        match estimator {
            EstimatorKind::Theory => {} // always reported above
            EstimatorKind::Importance => {
                let est = importance_oracle(
                    &instance.net,
                    train,
                    temp,
                    config.importance.draws,
                    splitmix(config.seed, width as u64),
                    &ImportanceOptions::default(),
                    None,
                );
                match est {
                    Ok(est) => {
                        out.estimates.extend(estimate_rows(
                            width,
                            "importance",
                            &instance,
                            &est.kernel_mean,
                            &est.kernel_se,
                            Some(est.ess),
                            &mut out.scatter,
                        ));
                    }
                    Err(e) => out.errors.push(CellError {
                        width,
                        estimator: "importance",
                        message: e.to_string(),
                    }),
                }
            }
            EstimatorKind::Langevin => {
                let schedule = LangevinSchedule {
                    dt: config.langevin.dt,
                    burn_in: config.langevin.burn_in,
                    sample_steps: config.langevin.sample_steps,
                    thinning: config.langevin.thinning,
                    seed: splitmix(config.seed, 0x4c61_6e67 ^ width as u64),
                    chains: config.langevin.chains,
                    omega: config.temperature.omega,
                };
                match run_chains_parallel(&instance.net, train, temp, &schedule, test) {
                    Ok(est) => {
                        out.estimates.extend(estimate_rows(
                            width,
                            "langevin",
                            &instance,
                            &est.kernel_mean,
                            &est.kernel_se,
                            Some(est.ess),
                            &mut out.scatter,
                        ));
                    }
                    Err(e) => out.errors.push(CellError {
                        width,
                        estimator: "langevin",
                        message: e.to_string(),
                    }),
                }
            }
        }
    }
    Ok(out)
}

fn estimator_name(kind: EstimatorKind) -> &'static str {
    match kind {
        EstimatorKind::Theory => "theory",
        EstimatorKind::Importance => "importance",
        EstimatorKind::Langevin => "langevin",
    }
}

fn evaluate_checks(config: &ExperimentConfig, report: &mut Report) {
    for check in &config.accept {
        match check {
            AcceptCheck::MaxRelFrobenius { estimator, bound } => {
                let name = format!(
                    "rel-frobenius[{}] <= {bound}",
                    estimator_name(*estimator)
                );
                let widest = config.sweep.widths.iter().copied().max().unwrap_or(0);
                let worst = report
                    .estimates
                    .iter()
                    .filter(|r| r.width == widest && r.estimator == estimator_name(*estimator))
                    .filter_map(|r| r.rel_error_vs_theory)
                    .fold(f64::NAN, f64::max);
                let passed = worst.is_finite() && worst <= *bound;
                report.checks.push(CheckResult {
                    name,
                    passed,
                    detail: format!("worst relative error at width {widest}: {worst:.4}"),
                });
            }
            AcceptCheck::SlopeWithin { estimator, layer, min, max } => {
                let name = format!(
                    "slope[{} layer {layer}] in [{min}, {max}]",
                    estimator_name(*estimator)
                );
                let slope = report
                    .slopes
                    .iter()
                    .find(|s| s.estimator == estimator_name(*estimator) && s.layer == *layer)
                    .map(|s| s.fit.slope);
                let passed = slope.map(|s| s >= *min && s <= *max).unwrap_or(false);
                report.checks.push(CheckResult {
                    name,
                    passed,
                    detail: match slope {
                        Some(s) => format!("fitted slope {s:.4}"),
                        None => "no fit available".into(),
                    },
                });
            }
        }
    }
}

/// Run the experiment and write `report.json`, `scatter.csv`, and
/// `scaling.csv` into `out_dir`.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<RunOutcome> {
    std::fs::create_dir_all(out_dir).map_err(|e| AppError::io(out_dir, e))?;
    let temp = TemperatureParams::new(config.temperature.beta, config.temperature.sigma_d_sq)?;
    let (train, test, gxx, gyy) = build_data(config)?;

    let width_results: Vec<Result<WidthResult>> = config
        .sweep
        .widths
        .par_iter()
        .map(|&w| run_width(config, &train, test.as_ref(), &gxx, &gyy, &temp, w))
        .collect();

    let mut report = Report {
        config: config.clone(),
        theory: Vec::new(),
        estimates: Vec::new(),
        slopes: Vec::new(),
        checks: Vec::new(),
        errors: Vec::new(),
        warnings: Vec::new(),
    };
    let mut scatter = Vec::new();
    for wr in width_results {
        let wr = wr?;
        report.theory.extend(wr.theory);
        report.estimates.extend(wr.estimates);
        report.errors.extend(wr.errors);
        report.warnings.extend(wr.warnings);
        scatter.extend(wr.scatter);
    }

    // Power-law fits of deviation norms vs width (incl. the theory column).
    let layers = reported_layers(config);
    if config.sweep.widths.len() >= 3 {
        for &layer in &layers {
            let pts: Vec<(f64, f64)> = report
                .theory
                .iter()
                .filter(|t| t.layer == layer)
                .filter_map(|t| t.theory_shift_frobenius.map(|v| (t.width as f64, v)))
                .filter(|&(_, v)| v > 0.0)
                .collect();
            if pts.len() >= 3 {
                if let Ok(fit) = fit_power_law(&pts) {
                    report.slopes.push(SlopeRow { estimator: "theory", layer, fit });
                }
            }
            for est in ["importance", "langevin"] {
                let pts: Vec<(f64, f64)> = report
                    .estimates
                    .iter()
                    .filter(|r| r.layer == layer && r.estimator == est)
                    .map(|r| (r.width as f64, r.deviation_frobenius))
                    .filter(|&(_, v)| v > 0.0)
                    .collect();
                if pts.len() >= 3 {
                    if let Ok(fit) = fit_power_law(&pts) {
                        report.slopes.push(SlopeRow { estimator: est, layer, fit });
                    }
                }
            }
        }
    }

    evaluate_checks(config, &mut report);

    write_json(&out_dir.join("report.json"), &report)?;
    write_scatter_csv(&out_dir.join("scatter.csv"), &scatter)?;
    write_scaling_csv(&out_dir.join("scaling.csv"), &report)?;

    let exit_code = if !report.errors.is_empty()
        && report.errors.iter().any(|e| e.message.contains("diverged"))
    {
        4
    } else if report.checks.iter().any(|c| !c.passed) {
        3
    } else {
        0
    };
    Ok(RunOutcome { report, exit_code })
}

fn write_json(path: &Path, report: &Report) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| AppError::io(path, e))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(f), report)?;
    Ok(())
}

use crate::data::format_sig9 as sig9;

fn write_scatter_csv(path: &Path, points: &[ScatterPoint]) -> Result<()> {
    let mut f = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| AppError::io(path, e))?,
    );
    let w = |f: &mut dyn Write, s: String| -> Result<()> {
        f.write_all(s.as_bytes()).map_err(|e| AppError::io(path, e))
    };
    w(&mut f, "width,layer,estimator,row,col,theory_shift,empirical_shift,se\n".into())?;
    for p in points {
        w(
            &mut f,
            format!(
                "{},{},{},{},{},{},{},{}\n",
                p.width,
                p.layer,
                p.estimator,
                p.row,
                p.col,
                p.theory_shift.map(sig9).unwrap_or_default(),
                sig9(p.empirical_shift),
                sig9(p.se)
            ),
        )?;
    }
    Ok(())
}

fn write_scaling_csv(path: &Path, report: &Report) -> Result<()> {
    let mut f = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| AppError::io(path, e))?,
    );
    let w = |f: &mut dyn Write, s: String| -> Result<()> {
        f.write_all(s.as_bytes()).map_err(|e| AppError::io(path, e))
    };
    w(&mut f, "width,layer,estimator,deviation_frobenius,se\n".into())?;
    for t in &report.theory {
        if let Some(v) = t.theory_shift_frobenius {
            w(&mut f, format!("{},{},theory,{},{}\n", t.width, t.layer, sig9(v), sig9(0.0)))?;
        }
    }
    for r in &report.estimates {
        w(
            &mut f,
            format!(
                "{},{},{},{},{}\n",
                r.width,
                r.layer,
                r.estimator,
                sig9(r.deviation_frobenius),
                sig9(r.deviation_se)
            ),
        )?;
    }
    Ok(())
}
