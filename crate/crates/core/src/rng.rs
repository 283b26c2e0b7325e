//! Seeding discipline shared by every stochastic routine.
//!
//! All randomness comes from ChaCha8 keyed by the user seed, with the 64-bit
//! stream selector derived from a path of integer labels (repetition index,
//! draw index, role tag, ...). Two calls with the same `(seed, path)` see the
//! same stream no matter which thread runs them or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream labels used across modules, so that independent consumers of the
/// same seed never collide.
pub mod tag {
    pub const GRAPHS0: u64 = 0x6730;
    pub const GRAPHS1: u64 = 0x6731;
    pub const LIMIT_DRAW: u64 = 0x4c4e;
    pub const STARTS: u64 = 0x5354;
    pub const BOOT0: u64 = 0xb030;
    pub const BOOT1: u64 = 0xb031;
    pub const REP: u64 = 0x5245;
    pub const MODEL: u64 = 0x4d44;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream selector for a label path.
pub fn stream_id(path: &[u64]) -> u64 {
    path.iter()
        .fold(0x243f_6a88_85a3_08d3, |acc, &x| splitmix(acc ^ splitmix(x)))
}

/// RNG for `(seed, path)`.
pub fn stream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(path));
    rng
}

/// Derive a child seed, for APIs that take a plain `u64` seed.
pub fn child_seed(seed: u64, path: &[u64]) -> u64 {
    splitmix(seed ^ stream_id(path))
}
