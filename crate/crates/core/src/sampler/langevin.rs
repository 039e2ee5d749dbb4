//! Euler–Maruyama Langevin chains over network parameters.
//!
//! The update is the unit-temperature form `Theta <- Theta -
//! (beta^(1+omega) * Theta / sigma_slot^2 + beta * grad E) dt + xi
//! sqrt(2 dt)`, whose stationary law is `exp(-beta E) * prior` for every
//! `beta >= 0`; at `beta = 1` (all sampling runs here) it coincides term by
//! term with the conventional `-(lambda(beta) Theta / sigma^2 + grad E) dt +
//! xi sqrt(2 dt / beta)` with `lambda(beta) = beta^omega`, and `beta = 0`
//! cleanly samples the prior. Default `omega = -1`.

use super::forward::{grad_energy, param_layout, ParamSlot};
use super::{forward, Dataset, NetworkConfig};
use crate::corrections::TemperatureParams;
use crate::error::{CoreError, Result};
use crate::mat::Mat;
use crate::rng::{chain_step_stream, standard_normal, stream_rng};
use alloc::vec::Vec;
use rand_chacha::ChaCha8Rng;

/// Step size, burn-in/sampling window, thinning stride, seed, and chain
/// count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LangevinSchedule {
    pub dt: f64,
    pub burn_in: u64,
    pub sample_steps: u64,
    pub thinning: u64,
    pub seed: u64,
    pub chains: u64,
    /// Exponent of the prior-decay temperature dependence
    /// `lambda(beta) = beta^omega`.
    pub omega: f64,
}

impl LangevinSchedule {
    pub fn new(
        dt: f64,
        burn_in: u64,
        sample_steps: u64,
        thinning: u64,
        seed: u64,
        chains: u64,
    ) -> Result<Self> {
        let s = Self { dt, burn_in, sample_steps, thinning, seed, chains, omega: -1.0 };
        s.validate()?;
        Ok(s)
    }

    /// Desk-scale default: `dt = 1e-3`, `2e5` burn-in and sampling steps,
    /// thinning 10.
    pub fn desk_default(seed: u64, chains: u64) -> Self {
        Self {
            dt: 1e-3,
            burn_in: 200_000,
            sample_steps: 200_000,
            thinning: 10,
            seed,
            chains,
            omega: -1.0,
        }
    }

    pub fn with_omega(mut self, omega: f64) -> Self {
        self.omega = omega;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(CoreError::invalid("dt must be positive and finite"));
        }
        if self.thinning == 0 {
            return Err(CoreError::invalid("thinning stride must be >= 1"));
        }
        if self.burn_in + self.sample_steps < self.thinning {
            return Err(CoreError::invalid("schedule shorter than one thinning stride"));
        }
        if self.chains == 0 {
            return Err(CoreError::invalid("need at least one chain"));
        }
        Ok(())
    }

    fn retained(&self) -> u64 {
        self.sample_steps / self.thinning
    }
}

/// Parameters plus schedule position of one chain; the RNG stream is a pure
/// function of `(seed, chain, step)`, so the state needs no generator.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub params: Vec<Mat>,
    pub step: u64,
    pub chain: u64,
}

impl ChainState {
    /// Prior-initialized state (stream `(chain, step 0)`).
    pub fn init(config: &NetworkConfig, input_dim: usize, seed: u64, chain: u64) -> Result<Self> {
        let layout = param_layout(config, input_dim)?;
        let mut rng = stream_rng(seed, chain_step_stream(chain, 0));
        let params = layout.iter().map(|slot| prior_draw(slot, &mut rng)).collect();
        Ok(Self { params, step: 0, chain })
    }
}

fn prior_draw(slot: &ParamSlot, rng: &mut ChaCha8Rng) -> Mat {
    Mat::from_fn(slot.rows, slot.cols, |_, c| {
        libm::sqrt(slot.col_vars.var(c)) * standard_normal(rng)
    })
}

const DIVERGENCE_BOUND: f64 = 1e10;

/// One discretized update of every parameter matrix. Fails with a
/// divergence error naming the step size when any entry leaves `[-1e10,
/// 1e10]`.
pub fn langevin_step(
    state: &mut ChainState,
    config: &NetworkConfig,
    data: &Dataset,
    temp: &TemperatureParams,
    schedule: &LangevinSchedule,
) -> Result<()> {
    let beta = temp.finite_beta().ok_or_else(|| {
        CoreError::NeedsFiniteTemperature("Langevin sampling needs finite beta".into())
    })?;
    let layout = param_layout(config, data.input_dim())?;
    let (_, grads) = grad_energy(config, &state.params, data)?;
    let dt = schedule.dt;
    let noise_scale = libm::sqrt(2.0 * dt);
    // Unit-temperature prior decay: beta^(1+omega), = 1 for omega = -1.
    let decay = libm::pow(beta, 1.0 + schedule.omega);
    state.step += 1;
    let mut rng = stream_rng(schedule.seed, chain_step_stream(state.chain, state.step));
    for ((w, g), slot) in state.params.iter_mut().zip(&grads).zip(&layout) {
        for c in 0..slot.cols {
            let prec = decay / slot.col_vars.var(c);
            for r in 0..slot.rows {
                let v = w[(r, c)];
                let next =
                    v - (prec * v + beta * g[(r, c)]) * dt + noise_scale * standard_normal(&mut rng);
                if !next.is_finite() || next.abs() > DIVERGENCE_BOUND {
                    return Err(CoreError::Divergence {
                        chain: state.chain as usize,
                        step: state.step,
                        dt,
                    });
                }
                w[(r, c)] = next;
            }
        }
    }
    Ok(())
}

/// Receives retained kernel samples as they are produced (the std companion
/// crate writes them to the binary trace stream).
pub trait TraceSink {
    fn record(&mut self, record: &TraceRecord<'_>);
}

#[derive(Debug)]
pub struct TraceRecord<'a> {
    pub chain: u64,
    pub step: u64,
    pub layer: usize,
    pub kernel: &'a Mat,
}

/// Posterior kernel estimates averaged over post-burn-in thinned steps.
#[derive(Debug, Clone)]
pub struct KernelEstimate {
    /// Posterior mean kernel per hidden layer (flattened four-index form for
    /// CNNs).
    pub kernel_mean: Vec<Mat>,
    /// Entrywise standard errors (batch means over chain segments).
    pub kernel_se: Vec<Mat>,
    /// Median effective sample size across kernel entries.
    pub ess: f64,
    /// Retained samples across all chains.
    pub n_samples: usize,
    /// Mean predictor on the optional test set (`p_hat x n_d`).
    pub predictor_mean: Option<Mat>,
    pub predictor_se: Option<Mat>,
}

struct ChainAccumulator {
    kernel_sum: Vec<Mat>,
    kernel_sq_sum: Vec<Mat>,
    batch_sums: Vec<Vec<Mat>>, // [batch][layer]
    predictor_sum: Option<Mat>,
    predictor_batch: Vec<Mat>,
    count: usize,
    batch_len: usize,
}

/// Run one chain to completion and return its accumulated statistics.
#[allow(clippy::too_many_arguments)]
pub fn run_chain(
    config: &NetworkConfig,
    data: &Dataset,
    temp: &TemperatureParams,
    schedule: &LangevinSchedule,
    chain: u64,
    test: Option<&Dataset>,
    batches_per_chain: usize,
    mut trace: Option<&mut dyn TraceSink>,
) -> Result<ChainStats> {
    schedule.validate()?;
    let mut state = ChainState::init(config, data.input_dim(), schedule.seed, chain)?;
    for _ in 0..schedule.burn_in {
        langevin_step(&mut state, config, data, temp, schedule)?;
    }
    let retained_target = schedule.retained() as usize;
    let batch_len = (retained_target / batches_per_chain.max(1)).max(1);

    let mut acc: Option<ChainAccumulator> = None;
    let mut retained = 0usize;
    for t in 0..schedule.sample_steps {
        langevin_step(&mut state, config, data, temp, schedule)?;
        if (t + 1) % schedule.thinning != 0 {
            continue;
        }
        let pass = forward(config, &state.params, data.x())?;
        let test_out = match test {
            Some(ts) => Some(forward(config, &state.params, ts.x())?.output),
            None => None,
        };
        let a = acc.get_or_insert_with(|| ChainAccumulator {
            kernel_sum: pass.kernels.iter().map(|k| Mat::zeros(k.nrows(), k.ncols())).collect(),
            kernel_sq_sum: pass.kernels.iter().map(|k| Mat::zeros(k.nrows(), k.ncols())).collect(),
            batch_sums: Vec::new(),
            predictor_sum: test_out.as_ref().map(|o| Mat::zeros(o.nrows(), o.ncols())),
            predictor_batch: Vec::new(),
            count: 0,
            batch_len,
        });
        // The overall mean uses every retained sample; SE batches use the
        // first batches_per_chain * batch_len of them (equal-size batches).
        let in_batches = retained < batch_len * batches_per_chain.max(1);
        if in_batches && retained.is_multiple_of(batch_len) {
            a.batch_sums
                .push(pass.kernels.iter().map(|k| Mat::zeros(k.nrows(), k.ncols())).collect());
            if let Some(o) = test_out.as_ref() {
                a.predictor_batch.push(Mat::zeros(o.nrows(), o.ncols()));
            }
        }
        let last_batch = a.batch_sums.len().saturating_sub(1);
        for (layer, k) in pass.kernels.iter().enumerate() {
            a.kernel_sum[layer] += k;
            a.kernel_sq_sum[layer] += k.component_mul(k);
            if in_batches {
                a.batch_sums[last_batch][layer] += k;
            }
            if let Some(sink) = trace.as_deref_mut() {
                sink.record(&TraceRecord { chain, step: state.step, layer, kernel: k });
            }
        }
        if let (Some(sum), Some(o)) = (a.predictor_sum.as_mut(), test_out.as_ref()) {
            *sum += o;
            if in_batches {
                a.predictor_batch[last_batch] += o;
            }
        }
        a.count += 1;
        retained += 1;
    }
    let a = acc.ok_or_else(|| CoreError::invalid("schedule retained no samples"))?;
    Ok(ChainStats {
        kernel_sum: a.kernel_sum,
        kernel_sq_sum: a.kernel_sq_sum,
        batch_means: a
            .batch_sums
            .iter()
            .map(|layers| layers.iter().map(|m| m / a.batch_len as f64).collect())
            .collect(),
        predictor_sum: a.predictor_sum,
        predictor_batch_means: a
            .predictor_batch
            .iter()
            .map(|m| m / a.batch_len as f64)
            .collect(),
        count: a.count,
    })
}

/// Per-chain sums; combined by [`combine_chain_stats`]. Public so the std
/// crate can run chains in parallel and reduce in chain order.
#[derive(Debug, Clone)]
pub struct ChainStats {
    pub kernel_sum: Vec<Mat>,
    pub kernel_sq_sum: Vec<Mat>,
    pub batch_means: Vec<Vec<Mat>>,
    pub predictor_sum: Option<Mat>,
    pub predictor_batch_means: Vec<Mat>,
    pub count: usize,
}

/// Average kernels over post-burn-in thinned steps across chains.
/// Deterministic given `(seed, chains)` regardless of execution order.
pub fn run_chains(
    config: &NetworkConfig,
    data: &Dataset,
    temp: &TemperatureParams,
    schedule: &LangevinSchedule,
    test: Option<&Dataset>,
    mut trace: Option<&mut dyn TraceSink>,
) -> Result<KernelEstimate> {
    let per_chain_batches = 8usize;
    let mut all = Vec::with_capacity(schedule.chains as usize);
    for chain in 0..schedule.chains {
        let sink: Option<&mut dyn TraceSink> = match trace.as_mut() {
            Some(t) => Some(&mut **t),
            None => None,
        };
        all.push(run_chain(
            config,
            data,
            temp,
            schedule,
            chain,
            test,
            per_chain_batches,
            sink,
        )?);
    }
    combine_chain_stats(&all)
}

/// Order-independent reduction of per-chain statistics.
pub fn combine_chain_stats(stats: &[ChainStats]) -> Result<KernelEstimate> {
    if stats.is_empty() {
        return Err(CoreError::invalid("no chain statistics to combine"));
    }
    let layers = stats[0].kernel_sum.len();
    let total: usize = stats.iter().map(|s| s.count).sum();
    let mut kernel_mean = Vec::with_capacity(layers);
    let mut kernel_se = Vec::with_capacity(layers);
    let mut ess_values: Vec<f64> = Vec::new();
    for layer in 0..layers {
        let mut sum = Mat::zeros(
            stats[0].kernel_sum[layer].nrows(),
            stats[0].kernel_sum[layer].ncols(),
        );
        let mut sq = sum.clone();
        for s in stats {
            sum += &s.kernel_sum[layer];
            sq += &s.kernel_sq_sum[layer];
        }
        let mean = &sum / total as f64;
        let sample_var = (&sq / total as f64 - mean.component_mul(&mean)).map(|v| v.max(0.0));

        // Batch means across all chains give the SE of the mean.
        let batch_means: Vec<&Mat> =
            stats.iter().flat_map(|s| s.batch_means.iter().map(move |b| &b[layer])).collect();
        let nb = batch_means.len();
        let bmean =
            batch_means.iter().fold(Mat::zeros(mean.nrows(), mean.ncols()), |a, m| a + *m)
                / nb as f64;
        let mut bvar = Mat::zeros(mean.nrows(), mean.ncols());
        for m in &batch_means {
            let dv = *m - &bmean;
            bvar += dv.component_mul(&dv);
        }
        if nb > 1 {
            bvar /= (nb - 1) as f64 * nb as f64;
        }
        let se = bvar.map(libm::sqrt);
        for i in 0..mean.nrows() {
            for j in 0..mean.ncols() {
                let v = bvar[(i, j)];
                if v > 0.0 {
                    ess_values.push(sample_var[(i, j)] / v);
                }
            }
        }
        kernel_mean.push(mean);
        kernel_se.push(se);
    }
    ess_values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let ess = if ess_values.is_empty() {
        0.0
    } else {
        ess_values[ess_values.len() / 2]
    };

    let (predictor_mean, predictor_se) = if stats[0].predictor_sum.is_some() {
        let shape = stats[0].predictor_sum.as_ref().unwrap().shape();
        let mut sum = Mat::zeros(shape.0, shape.1);
        for s in stats {
            sum += s.predictor_sum.as_ref().expect("consistent predictor collection");
        }
        let mean = &sum / total as f64;
        let batch_means: Vec<&Mat> =
            stats.iter().flat_map(|s| s.predictor_batch_means.iter()).collect();
        let nb = batch_means.len();
        let bmean = batch_means.iter().fold(Mat::zeros(shape.0, shape.1), |a, m| a + *m)
            / nb as f64;
        let mut bvar = Mat::zeros(shape.0, shape.1);
        for m in &batch_means {
            let dv = *m - &bmean;
            bvar += dv.component_mul(&dv);
        }
        if nb > 1 {
            bvar /= (nb - 1) as f64 * nb as f64;
        }
        (Some(mean), Some(bvar.map(libm::sqrt)))
    } else {
        (None, None)
    };

    Ok(KernelEstimate {
        kernel_mean,
        kernel_se,
        ess,
        n_samples: total,
        predictor_mean,
        predictor_se,
    })
}
