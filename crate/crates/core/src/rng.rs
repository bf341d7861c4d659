//! Seed derivation for independent deterministic random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a base seed and a sequence of discriminators into one 64-bit seed.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(seed), |acc, &p| mix(acc ^ mix(p)))
}

/// A ChaCha stream keyed by `seed` and `parts`.
pub fn stream(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, parts))
}

/// Purpose tags so that streams for different subsystems never collide.
pub mod tag {
    pub const GAIN: u64 = 0x6761_696e;
    pub const WORKLOAD: u64 = 0x776f_726b;
    pub const INIT: u64 = 0x696e_6974;
    pub const ACT: u64 = 0x6163_7421;
    pub const REPLAY: u64 = 0x7265_706c;
    pub const BASELINE: u64 = 0x6261_7365;
    pub const EVAL: u64 = 0x6576_616c;
    pub const TRAIN: u64 = 0x7472_6169;
}
