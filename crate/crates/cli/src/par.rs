//! Parallel drivers around the core estimators. Results are bitwise
//! identical to the sequential paths: every chain owns a counter-based RNG
//! stream and the reductions run in chain order.

use crate::error::Result;
use rayon::prelude::*;
use widthfx_core::corrections::TemperatureParams;
use widthfx_core::sampler::{
    combine_chain_stats, run_chain, ChainStats, Dataset, KernelEstimate, LangevinSchedule,
    NetworkConfig,
};

const BATCHES_PER_CHAIN: usize = 8;

/// [`widthfx_core::sampler::run_chains`] with chains spread across the rayon
/// pool (no trace sink; tracing forces the sequential path).
pub fn run_chains_parallel(
    config: &NetworkConfig,
    data: &Dataset,
    temp: &TemperatureParams,
    schedule: &LangevinSchedule,
    test: Option<&Dataset>,
) -> Result<KernelEstimate> {
    let stats: Vec<ChainStats> = (0..schedule.chains)
        .into_par_iter()
        .map(|chain| {
            run_chain(config, data, temp, schedule, chain, test, BATCHES_PER_CHAIN, None)
        })
        .collect::<widthfx_core::Result<Vec<_>>>()?;
    Ok(combine_chain_stats(&stats)?)
}
