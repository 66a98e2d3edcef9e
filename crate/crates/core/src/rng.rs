//! Seeded random streams.
//!
//! Every random quantity in the crate comes from a ChaCha8 stream seeded with
//! [`rand::SeedableRng::seed_from_u64`]. Independent sub-streams (one per trial,
//! one per mechanism) are obtained with [`derive_seed`], so trials can run in
//! any order or in parallel and still produce the same numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used throughout the crate.
pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the seed of sub-stream `index` from `base`.
///
/// `derive_seed(b, i) = mix64(b + (i + 1) * 0x9e3779b97f4a7c15)` with wrapping
/// arithmetic, i.e. the `i+1`-th output of a SplitMix64 generator started at `b`.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    mix64(base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}
