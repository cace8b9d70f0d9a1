//! Seeded random streams.
//!
//! Every sampling routine takes its randomness from an explicit stream. Work
//! that fans out over independent units (paths, chains, permutations) derives
//! one child stream per unit from `(master seed, index)`, so results do not
//! depend on the order in which units are executed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Stream for a master seed, positioned on sub-stream 0.
pub fn stream(seed: u64) -> Stream {
    child_stream(seed, 0)
}

/// Independent child stream `index` of the master `seed`.
pub fn child_stream(seed: u64, index: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Derive a new master seed from a parent seed and a label, for nested fan-out
/// (e.g. replicate `r` of a sweep).
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
