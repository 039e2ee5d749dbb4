//! Flat key-value experiment configs.
//!
//! The format is intentionally diff-friendly: one `key = value` pair per
//! line, `#` comments, dotted section keys that mirror the type fields 1:1.

use crate::error::{AppError, Result};
use std::collections::BTreeMap;
use std::path::Path;
use widthfx_core::gpkernels::ActivationSpec;

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub enum TaskSource {
    Synthetic {
        seed: u64,
        n0: usize,
        teacher: String,
    },
    Idx {
        images: String,
        labels: String,
        downsample_to: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum ArchKind {
    MlpLinear,
    CnnLinear1d,
    CnnLinear2d,
    MlpRelu,
    SingleNonlinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum EstimatorKind {
    Theory,
    Importance,
    Langevin,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ExperimentConfig {
    pub task: TaskConfig,
    pub architecture: ArchConfig,
    pub temperature: TemperatureConfig,
    pub sweep: SweepConfig,
    pub estimators: Vec<EstimatorKind>,
    pub importance: ImportanceConfig,
    pub langevin: LangevinConfig,
    pub accept: Vec<AcceptCheck>,
    pub seed: u64,
    pub out: Option<String>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct TaskConfig {
    pub source: TaskSource,
    pub p: usize,
    pub n_d: usize,
    /// Held-out test samples (synthetic tasks only).
    pub test_p: usize,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ArchConfig {
    pub kind: ArchKind,
    pub depth: usize,
    pub sigma_sq: Vec<f64>,
    pub activation: Option<String>,
    pub spatial: Vec<usize>,
    pub filter_half_width: usize,
    pub readout: String,
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct TemperatureConfig {
    pub beta: f64,
    pub sigma_d_sq: f64,
    pub omega: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct SweepConfig {
    pub widths: Vec<usize>,
    pub bottleneck: Option<usize>,
    /// Hidden layers to report; empty means all.
    pub layers: Vec<usize>,
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct ImportanceConfig {
    pub draws: usize,
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct LangevinConfig {
    pub dt: f64,
    pub burn_in: u64,
    pub sample_steps: u64,
    pub thinning: u64,
    pub chains: u64,
}

/// A pass/fail check evaluated by `run`; any failure makes the run exit
/// with code 3.
#[derive(Debug, Clone, serde::Serialize)]
pub enum AcceptCheck {
    /// Relative Frobenius error between an estimator's deviation and the
    /// theory shift, at the largest width, per reported layer.
    MaxRelFrobenius { estimator: EstimatorKind, bound: f64 },
    /// Fitted log-log slope of the estimator's deviation norm vs width.
    SlopeWithin { estimator: EstimatorKind, layer: usize, min: f64, max: f64 },
}

fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            AppError::Config(format!("line {}: expected `key = value`", lineno + 1))
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

struct Keys {
    map: BTreeMap<String, String>,
    used: std::cell::RefCell<std::collections::BTreeSet<String>>,
}

impl Keys {
    fn get(&self, key: &str) -> Option<&str> {
        if self.map.contains_key(key) {
            self.used.borrow_mut().insert(key.to_string());
        }
        self.map.get(key).map(|s| s.as_str())
    }

    fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| AppError::Config(format!("missing key `{key}`")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| AppError::Config(format!("key `{key}`: cannot parse `{v}`"))),
        }
    }

    fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    fn parse_list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>> {
        match self.get(key) {
            None => Ok(Vec::new()),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<T>()
                        .map_err(|_| AppError::Config(format!("key `{key}`: bad entry `{s}`")))
                })
                .collect(),
        }
    }

    fn unused(&self) -> Vec<String> {
        let used = self.used.borrow();
        self.map.keys().filter(|k| !used.contains(*k)).cloned().collect()
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let keys = Keys { map: parse_kv(text)?, used: Default::default() };

    let source = match keys.parse_or::<String>("task.source", "synthetic".into())?.as_str() {
        "synthetic" => TaskSource::Synthetic {
            seed: keys.parse_or("task.seed", 1u64)?,
            n0: keys
                .parse::<usize>("task.n0")?
                .ok_or_else(|| AppError::Config("synthetic task needs task.n0".into()))?,
            teacher: keys.parse_or("task.teacher", "random-linear".into())?,
        },
        "idx" => TaskSource::Idx {
            images: keys.require("task.images")?.to_string(),
            labels: keys.require("task.labels")?.to_string(),
            downsample_to: keys.parse("task.downsample")?,
        },
        other => return Err(AppError::Config(format!("unknown task.source `{other}`"))),
    };
    let task = TaskConfig {
        source,
        p: keys
            .parse::<usize>("task.p")?
            .ok_or_else(|| AppError::Config("missing key `task.p`".into()))?,
        n_d: keys.parse_or("task.n_d", 1usize)?,
        test_p: keys.parse_or("task.test_p", 0usize)?,
    };

    let kind = match keys.require("architecture.kind")? {
        "mlp-linear" => ArchKind::MlpLinear,
        "cnn-linear-1d" => ArchKind::CnnLinear1d,
        "cnn-linear-2d" => ArchKind::CnnLinear2d,
        "mlp-relu" => ArchKind::MlpRelu,
        "single-nonlinear" => ArchKind::SingleNonlinear,
        other => return Err(AppError::Config(format!("unknown architecture.kind `{other}`"))),
    };
    let depth = keys.parse_or("architecture.depth", 2usize)?;
    if depth < 2 {
        return Err(AppError::Config("architecture.depth must be >= 2".into()));
    }
    if kind == ArchKind::SingleNonlinear && depth != 2 {
        return Err(AppError::Config("single-nonlinear requires architecture.depth = 2".into()));
    }
    let mut sigma_sq: Vec<f64> = keys.parse_list("architecture.sigma_sq")?;
    if sigma_sq.is_empty() {
        sigma_sq = vec![1.0; depth];
    }
    if sigma_sq.len() != depth {
        return Err(AppError::Config(format!(
            "architecture.sigma_sq needs {depth} entries, got {}",
            sigma_sq.len()
        )));
    }
    let spatial: Vec<usize> = keys.parse_list("architecture.spatial")?;
    match kind {
        ArchKind::CnnLinear1d if spatial.len() != 1 => {
            return Err(AppError::Config("cnn-linear-1d needs architecture.spatial = s".into()));
        }
        ArchKind::CnnLinear2d if spatial.len() != 2 => {
            return Err(AppError::Config("cnn-linear-2d needs architecture.spatial = h,w".into()));
        }
        _ => {}
    }
    let architecture = ArchConfig {
        kind,
        depth,
        sigma_sq,
        activation: keys.get("architecture.activation").map(|s| s.to_string()),
        spatial,
        filter_half_width: keys.parse_or("architecture.filter_half_width", 1usize)?,
        readout: keys.parse_or("architecture.readout", "vectorization".into())?,
    };

    let temperature = TemperatureConfig {
        beta: keys.parse_or("temperature.beta", 1.0f64)?,
        sigma_d_sq: keys.parse_or("temperature.sigma_d_sq", *architecture.sigma_sq.last().unwrap())?,
        omega: keys.parse_or("temperature.omega", -1.0f64)?,
    };

    let widths: Vec<usize> = keys.parse_list("sweep.widths")?;
    if widths.is_empty() {
        return Err(AppError::Config("sweep.widths must list at least one width".into()));
    }
    let sweep = SweepConfig {
        widths,
        bottleneck: keys.parse("sweep.bottleneck")?,
        layers: keys.parse_list("sweep.layers")?,
    };

    let estimators: Vec<EstimatorKind> = keys
        .parse_or::<String>("estimators", "theory".into())?
        .split(',')
        .map(|s| match s.trim() {
            "theory" => Ok(EstimatorKind::Theory),
            "importance" => Ok(EstimatorKind::Importance),
            "langevin" => Ok(EstimatorKind::Langevin),
            other => Err(AppError::Config(format!("unknown estimator `{other}`"))),
        })
        .collect::<Result<_>>()?;
    if estimators.is_empty() {
        return Err(AppError::Config("need at least one estimator".into()));
    }

    let importance = ImportanceConfig { draws: keys.parse_or("importance.draws", 200_000usize)? };
    let langevin = LangevinConfig {
        dt: keys.parse_or("langevin.dt", 1e-3f64)?,
        burn_in: keys.parse_or("langevin.burn_in", 200_000u64)?,
        sample_steps: keys.parse_or("langevin.sample_steps", 200_000u64)?,
        thinning: keys.parse_or("langevin.thinning", 10u64)?,
        chains: keys.parse_or("langevin.chains", 2u64)?,
    };

    let mut accept = Vec::new();
    if let Some(bound) = keys.parse::<f64>("accept.max_rel_frobenius")? {
        let estimator = parse_estimator(keys.parse_or("accept.estimator", "importance".into())?)?;
        accept.push(AcceptCheck::MaxRelFrobenius { estimator, bound });
    }
    if let (Some(min), Some(max)) =
        (keys.parse::<f64>("accept.slope_min")?, keys.parse::<f64>("accept.slope_max")?)
    {
        let estimator = parse_estimator(keys.parse_or("accept.estimator", "importance".into())?)?;
        let layer = keys.parse_or("accept.slope_layer", 1usize)?;
        accept.push(AcceptCheck::SlopeWithin { estimator, layer, min, max });
    }

    let config = ExperimentConfig {
        task,
        architecture,
        temperature,
        sweep,
        estimators,
        importance,
        langevin,
        accept,
        seed: keys.parse_or("seed", 0u64)?,
        out: keys.get("out").map(|s| s.to_string()),
    };

    let unused = keys.unused();
    if !unused.is_empty() {
        return Err(AppError::Config(format!("unknown keys: {}", unused.join(", "))));
    }
    Ok(config)
}

fn parse_estimator(s: String) -> Result<EstimatorKind> {
    match s.as_str() {
        "theory" => Ok(EstimatorKind::Theory),
        "importance" => Ok(EstimatorKind::Importance),
        "langevin" => Ok(EstimatorKind::Langevin),
        other => Err(AppError::Config(format!("unknown estimator `{other}`"))),
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    parse_config(&text)
}

/// Parse the activation string of `single-nonlinear` configs.
pub fn parse_activation(spec: &str) -> Result<ActivationSpec> {
    match spec {
        "identity" => Ok(ActivationSpec::Identity),
        "relu" => Ok(ActivationSpec::Relu),
        "erf" => Ok(ActivationSpec::Erf),
        other => {
            if let Some(coeffs) = other.strip_prefix("poly:") {
                let c: Vec<f64> = coeffs
                    .split(',')
                    .map(|s| {
                        s.trim().parse::<f64>().map_err(|_| {
                            AppError::Config(format!("bad polynomial coefficient `{s}`"))
                        })
                    })
                    .collect::<Result<_>>()?;
                Ok(ActivationSpec::polynomial(c)?)
            } else {
                Err(AppError::Config(format!("unknown activation `{other}`")))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "
# synthetic linear sweep
task.source = synthetic
task.p = 6
task.n0 = 8
task.n_d = 2
task.seed = 3
architecture.kind = mlp-linear
architecture.depth = 3
temperature.beta = 1.0
sweep.widths = 64,128,256
estimators = theory,importance
importance.draws = 1000
seed = 9
";

    #[test]
    fn parses_sample() {
        let c = parse_config(SAMPLE).unwrap();
        assert_eq!(c.task.p, 6);
        assert_eq!(c.sweep.widths, vec![64, 128, 256]);
        assert_eq!(c.estimators, vec![EstimatorKind::Theory, EstimatorKind::Importance]);
        assert_eq!(c.architecture.sigma_sq, vec![1.0; 3]);
        assert_eq!(c.seed, 9);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(parse_config("task.p = 4\nbogus.key = 1\narchitecture.kind = mlp-linear\nsweep.widths = 8\ntask.n0 = 4").is_err());
        assert!(parse_config(&SAMPLE.replace("mlp-linear", "transformer")).is_err());
        assert!(parse_config(&SAMPLE.replace("64,128,256", "")).is_err());
    }

    #[test]
    fn activation_strings() {
        assert!(matches!(parse_activation("erf").unwrap(), ActivationSpec::Erf));
        assert!(matches!(parse_activation("poly:0,0,1").unwrap(), ActivationSpec::Polynomial(_)));
        assert!(parse_activation("poly:0,0,0,0,0,1").is_err());
        assert!(parse_activation("swish").is_err());
    }
}
