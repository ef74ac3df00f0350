//! Seeded random number generation.
//!
//! Every random draw in the crate comes from [`ChaCha8Rng`] seeded through
//! [`rng_from_seed`]. Standard normals are drawn with `rand_distr::StandardNormal`
//! (ziggurat). Independent substreams of one seed use ChaCha's 64-bit stream id,
//! so e.g. the task draw and the input draw of a prompt never share state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub use rand_chacha::ChaCha8Rng as Rng;

/// Stream ids used when splitting one prompt seed.
pub mod stream {
    pub const TASK: u64 = 0;
    pub const INPUTS: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const AUX: u64 = 3;
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministically derives a child seed from a parent seed and a list of tags.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(mix64(base), |acc, &t| mix64(acc ^ mix64(t)))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for one substream of `seed`.
pub fn substream(seed: u64, stream_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

#[inline]
pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}
