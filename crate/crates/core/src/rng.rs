//! Seeded random streams.
//!
//! Every stochastic component draws from a ChaCha8 stream built from an
//! explicit 64-bit seed. Normal variates come from `rand_distr::StandardNormal`
//! (ziggurat), which is stable for a fixed crate version.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type CdeRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> CdeRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream_id` derived from a base seed (`base + stream_id`).
pub fn stream(base_seed: u64, stream_id: u64) -> CdeRng {
    seeded(base_seed.wrapping_add(stream_id))
}

#[inline]
pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Fisher-Yates permutation of `0..n`.
pub fn permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}
