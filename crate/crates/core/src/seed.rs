//! Seed derivation and the generator used for every random draw.
//!
//! All randomness is drawn from ChaCha8 streams keyed by a 64-bit seed. Seeds
//! for individual realizations are derived from a base seed with the
//! SplitMix64 finalizer, so each `(base, T, realization)` triple owns an
//! independent, reproducible stream regardless of how work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer. A bijection on `u64`.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for realization `realization` at sample count `sample_count`.
///
/// For fixed `(base, sample_count)` the map `realization -> seed` is a
/// bijection, so realizations at one grid point never share a stream.
pub fn derive_seed(base: u64, sample_count: u64, realization: u64) -> u64 {
    let point = mix64(base.wrapping_add(GOLDEN) ^ mix64(sample_count.wrapping_mul(GOLDEN)));
    mix64(point.wrapping_add(realization.wrapping_mul(GOLDEN)))
}

/// Seed for a named auxiliary stream (reference runs, bound-term Monte Carlo).
pub fn stream_seed(base: u64, tag: &str) -> u64 {
    tag.bytes()
        .fold(mix64(base ^ 0xA5A5_A5A5_A5A5_A5A5), |acc, b| {
            mix64(acc ^ u64::from(b))
        })
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
