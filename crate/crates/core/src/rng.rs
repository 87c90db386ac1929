//! Seeded, platform-independent random streams.
//!
//! Every random draw in the crate (weight init, shuffles, dropout masks,
//! bootstrap samples, synthetic data) comes from a ChaCha8 generator whose
//! seed is derived from the run seed and a label naming the consumer, e.g.
//! `stream(seed, "init/conv1")`. Distinct labels give independent streams;
//! the same `(seed, label)` always reproduces the same sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(FNV_OFFSET, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the 64-bit seed of a labelled sub-stream.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    mix64(mix64(seed) ^ fnv1a(label))
}

/// Generator for the labelled sub-stream of `seed`.
pub fn stream(seed: u64, label: &str) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, label))
}
