//! Seeded random streams.
//!
//! Every consumer of randomness derives its own ChaCha stream from a base seed
//! and a fixed stream id, so adding a draw in one place never shifts the
//! numbers seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub mod streams {
    pub const INIT_ENCODER: u64 = 1;
    pub const INIT_POLICY: u64 = 2;
    pub const INIT_REWARD: u64 = 3;
    pub const ROLLOUT: u64 = 10;
    pub const STARTS: u64 = 11;
    pub const CORRUPTION: u64 = 12;
    pub const SHUFFLE_REWARD: u64 = 20;
    pub const SHUFFLE_PAIRS: u64 = 21;
    pub const SHUFFLE_STEPS: u64 = 22;
    pub const SHUFFLE_BC: u64 = 23;
}

/// A generator for `(seed, stream)`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A generator for `(seed, stream)` further keyed by an index such as an epoch.
pub fn indexed_stream(seed: u64, stream: u64, index: u64) -> Rng {
    let mixed = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    self::stream(mixed, stream)
}
