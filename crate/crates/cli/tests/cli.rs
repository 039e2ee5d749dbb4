//! End-to-end runner and binary checks.

use std::process::Command;
use widthfx::config::parse_config;
use widthfx::runner::run_experiment;
use widthfx::trace::{read_trace, TraceWriter};
use widthfx_core::corrections::TemperatureParams;
use widthfx_core::gpkernels::WidthProfile;
use widthfx_core::rng::{normal_matrix, stream_rng};
use widthfx_core::sampler::{run_chains, Architecture, Dataset, LangevinSchedule, NetworkConfig};

const SMALL_CONFIG: &str = "
task.source = synthetic
task.seed = 4
task.p = 4
task.n0 = 6
task.n_d = 2
architecture.kind = mlp-linear
architecture.depth = 3
temperature.beta = 1.0
sweep.widths = 32,64,128
estimators = theory,importance
importance.draws = 4000
seed = 12
";

#[test]
fn run_experiment_produces_reports_and_theory_slope() {
    let cfg = parse_config(SMALL_CONFIG).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let outcome = run_experiment(&cfg, dir.path()).unwrap();
    assert_eq!(outcome.exit_code, 0);
    assert!(dir.path().join("report.json").exists());
    assert!(dir.path().join("scatter.csv").exists());
    assert!(dir.path().join("scaling.csv").exists());

    // The theory column scales exactly as 1/n.
    let theory_slope = outcome
        .report
        .slopes
        .iter()
        .find(|s| s.estimator == "theory" && s.layer == 1)
        .expect("theory slope");
    assert!(
        (theory_slope.fit.slope + 1.0).abs() < 1e-10,
        "slope {}",
        theory_slope.fit.slope
    );
    assert!(theory_slope.fit.residual_rms < 1e-10);

    // Report is deterministic given the config.
    let dir2 = tempfile::tempdir().unwrap();
    let outcome2 = run_experiment(&cfg, dir2.path()).unwrap();
    let a = std::fs::read_to_string(dir.path().join("scaling.csv")).unwrap();
    let b = std::fs::read_to_string(dir2.path().join("scaling.csv")).unwrap();
    assert_eq!(a, b);
    assert_eq!(outcome.report.estimates.len(), outcome2.report.estimates.len());
}

#[test]
fn acceptance_checks_control_exit_code() {
    // An impossible bound must fail and exit 3.
    let cfg_text = format!("{SMALL_CONFIG}\naccept.max_rel_frobenius = 1e-9\n");
    let cfg = parse_config(&cfg_text).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let outcome = run_experiment(&cfg, dir.path()).unwrap();
    assert_eq!(outcome.exit_code, 3);
    assert!(outcome.report.checks.iter().any(|c| !c.passed));

    // A generous bound passes.
    let cfg_text = format!("{SMALL_CONFIG}\naccept.max_rel_frobenius = 10.0\n");
    let cfg = parse_config(&cfg_text).unwrap();
    let outcome = run_experiment(&cfg, tempfile::tempdir().unwrap().path()).unwrap();
    assert_eq!(outcome.exit_code, 0);
}

#[test]
fn binary_validate_and_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_widthfx");
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("exp.cfg");
    std::fs::write(&cfg_path, SMALL_CONFIG).unwrap();

    let ok = Command::new(exe).arg("validate").arg(&cfg_path).output().unwrap();
    assert!(ok.status.success(), "stderr: {}", String::from_utf8_lossy(&ok.stderr));
    let stdout = String::from_utf8_lossy(&ok.stdout);
    assert!(stdout.contains("config ok"), "stdout: {stdout}");

    // Config errors exit with code 2.
    let bad_path = dir.path().join("bad.cfg");
    std::fs::write(&bad_path, "architecture.kind = warp-drive\n").unwrap();
    let bad = Command::new(exe).arg("validate").arg(&bad_path).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn binary_run_writes_outputs() {
    let exe = env!("CARGO_BIN_EXE_widthfx");
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("exp.cfg");
    // Tiny theory-only run keeps this fast.
    std::fs::write(
        &cfg_path,
        "task.source = synthetic\ntask.seed = 2\ntask.p = 3\ntask.n0 = 5\ntask.n_d = 1\n\
         architecture.kind = mlp-linear\narchitecture.depth = 2\nsweep.widths = 16,32,64\n\
         estimators = theory\nseed = 1\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let run = Command::new(exe)
        .arg("run")
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(run.status.success(), "stderr: {}", String::from_utf8_lossy(&run.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap())
            .unwrap();
    assert!(report["theory"].as_array().unwrap().len() == 3);
}

#[test]
fn trace_stream_round_trips_chain_kernels() {
    let profile = WidthProfile::new(vec![5], 1, vec![1.0, 1.0]).unwrap();
    let config = NetworkConfig::new(Architecture::MlpLinear, profile).unwrap();
    let mut rng = stream_rng(900, 0);
    let data = Dataset::new(normal_matrix(&mut rng, 3, 4), normal_matrix(&mut rng, 3, 1)).unwrap();
    let temp = TemperatureParams::new(1.0, 1.0).unwrap();
    let schedule = LangevinSchedule::new(1e-2, 20, 40, 10, 31, 2).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("chains.bnns");
    let file = std::fs::File::create(&path).unwrap();
    let mut writer = TraceWriter::new(std::io::BufWriter::new(file)).unwrap();
    let est = run_chains(&config, &data, &temp, &schedule, None, Some(&mut writer)).unwrap();
    writer.finish().unwrap();

    let frames = read_trace(&path).unwrap();
    // 2 chains x 4 retained samples x 1 layer.
    assert_eq!(frames.len(), est.n_samples);
    assert_eq!(frames.iter().filter(|f| f.chain == 0).count(), 4);
    // The written kernels average to the reported mean.
    let mut mean = nalgebra::DMatrix::zeros(3, 3);
    for f in &frames {
        assert_eq!(f.kernel.shape(), (3, 3));
        mean += &f.kernel;
    }
    mean /= frames.len() as f64;
    assert!((mean - &est.kernel_mean[0]).abs().max() < 1e-12);
}
