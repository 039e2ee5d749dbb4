//! Counter-based RNG streams.
//!
//! Every stochastic path in the crate draws from a ChaCha stream addressed by
//! `(seed, stream id)`. A draw (or a chain, or a single Langevin step) owns
//! its own stream, so results are bitwise independent of how work is split
//! across threads and of what was sampled before.

use crate::mat::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// RNG for stream `stream` of the generator family identified by `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream id for a (chain, step) pair, so chain noise is a pure function of
/// the schedule position.
pub fn chain_step_stream(chain: u64, step: u64) -> u64 {
    chain.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(step)
}

pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// `rows x cols` matrix with i.i.d. standard normal entries.
pub fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Fill an existing matrix with i.i.d. standard normals (avoids reallocating
/// in per-step loops).
pub fn fill_normal(rng: &mut ChaCha8Rng, m: &mut Mat) {
    for v in m.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
}
