use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use widthfx::config::{load_config, EstimatorKind};
use widthfx::runner::{build_data, run_experiment};

#[derive(Parser)]
#[command(
    name = "widthfx",
    about = "Infinite-width kernels and finite-width corrections for Bayesian networks: config-driven experiment runner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write report.json / scatter.csv /
    /// scaling.csv.
    Run {
        config: PathBuf,
        /// Output directory (overrides the config's `out` key).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Master seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated estimator override: theory,importance,langevin.
        #[arg(long)]
        estimators: Option<String>,
    },
    /// Parse a config and dry-run the shape checks without estimating.
    Validate { config: PathBuf },
    /// Build the config's dataset and export it as CSV.
    ExportData {
        config: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_estimators(s: &str) -> Result<Vec<EstimatorKind>, widthfx::AppError> {
    s.split(',')
        .map(|e| match e.trim() {
            "theory" => Ok(EstimatorKind::Theory),
            "importance" => Ok(EstimatorKind::Importance),
            "langevin" => Ok(EstimatorKind::Langevin),
            other => Err(widthfx::AppError::Config(format!("unknown estimator `{other}`"))),
        })
        .collect()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> widthfx::Result<ExitCode> {
    match cli.command {
        Command::Run { config, out, seed, estimators } => {
            let mut cfg = load_config(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(est) = estimators {
                cfg.estimators = parse_estimators(&est)?;
                if cfg.estimators.is_empty() {
                    return Err(widthfx::AppError::Config("need at least one estimator".into()));
                }
            }
            let out_dir = out
                .or_else(|| cfg.out.clone().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("widthfx-out"));
            let outcome = run_experiment(&cfg, &out_dir)?;
            for check in &outcome.report.checks {
                println!(
                    "[check] {} ... {} ({})",
                    check.name,
                    if check.passed { "pass" } else { "FAIL" },
                    check.detail
                );
            }
            for err in &outcome.report.errors {
                eprintln!(
                    "[estimator error] width {} {}: {}",
                    err.width, err.estimator, err.message
                );
            }
            println!(
                "wrote {}, {}, {}",
                out_dir.join("report.json").display(),
                out_dir.join("scatter.csv").display(),
                out_dir.join("scaling.csv").display()
            );
            Ok(ExitCode::from(outcome.exit_code as u8))
        }
        Command::ExportData { config, out } => {
            let cfg = load_config(&config)?;
            let (train, _, _, _) = build_data(&cfg)?;
            widthfx::data::export_dataset_csv(&out, &train)?;
            println!("wrote {} ({} samples)", out.display(), train.len());
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { config } => {
            let cfg = load_config(&config)?;
            let (train, test, gxx, gyy) = build_data(&cfg)?;
            println!(
                "config ok: p = {}, input dim = {}, n_d = {}, test_p = {}",
                train.len(),
                train.input_dim(),
                train.output_dim(),
                test.as_ref().map(|t| t.len()).unwrap_or(0)
            );
            println!(
                "G_xx {p}x{p} (normalizer {nx}), G_yy {p}x{p} (normalizer {ny}), widths {:?}",
                cfg.sweep.widths,
                p = gxx.dim(),
                nx = gxx.normalizer(),
                ny = gyy.normalizer()
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}
