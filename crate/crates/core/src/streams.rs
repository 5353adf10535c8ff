//! Seed derivation and counter-keyed random streams.
//!
//! Every random quantity in a run (start vector, step directions, oracle
//! sample) is a pure function of a `(seed, stream, position)` triple, so two
//! runs that share a seed see the same numbers no matter how work is
//! scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub(crate) const START_TAG: u64 = 0x5354_4152_5453;
pub(crate) const DIRECTION_TAG: u64 = 0x4449_5245_4354;
pub(crate) const NOISE_TAG: u64 = 0x4e4f_4953_4521;
pub(crate) const PROBE_TAG: u64 = 0x5052_4f42_4553;

/// SplitMix64 finalizer.
pub fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Combines two words into a derived seed.
pub fn mix(a: u64, b: u64) -> u64 {
    splitmix(splitmix(a) ^ b.rotate_left(32) ^ 0x6a09_e667_f3bc_c909)
}

/// A ChaCha8 stream keyed by `(seed, stream)`; word `j` of the stream is
/// the `j`-th draw.
pub fn keyed(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Start vector drawn uniformly from `[-START_HALF_WIDTH, START_HALF_WIDTH]^d`.
pub fn start_point(seed: u64, d: usize) -> Vec<f64> {
    let mut rng = keyed(mix(seed, START_TAG), 0);
    (0..d)
        .map(|_| rng.random_range(-START_HALF_WIDTH..START_HALF_WIDTH))
        .collect()
}

pub const START_HALF_WIDTH: f64 = 2.0;

/// Seed for the directions sampled at `step` of a run started from `seed`.
pub fn direction_seed(seed: u64, step: u64) -> u64 {
    mix(mix(seed, DIRECTION_TAG), step)
}
