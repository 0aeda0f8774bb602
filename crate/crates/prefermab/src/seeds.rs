//! Deterministic seed streams.
//!
//! All randomness in the crate flows through explicitly seeded ChaCha
//! generators. Independent streams are derived from a base seed plus a
//! purpose tag and indices (arm, epoch, trial, ...), so results are
//! reproducible regardless of evaluation order or worker count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags for derived streams. Keeping them in one place avoids
/// accidental collisions between consumers.
pub mod purpose {
    pub const INIT_ACTOR: u64 = 1;
    pub const INIT_CRITIC: u64 = 2;
    pub const INIT_LAMBDA: u64 = 3;
    pub const FEATURE_MAP: u64 = 4;
    pub const OPT_IN: u64 = 5;
    pub const NEWCOMER: u64 = 6;
    pub const ROLLOUT: u64 = 7;
    pub const EVAL_TRIAL: u64 = 8;
    pub const POPULATION: u64 = 9;
    pub const BASELINE: u64 = 10;
    pub const INIT_STATE: u64 = 11;
    pub const TEST_POPULATION: u64 = 12;
    pub const FIXED_POPULATION: u64 = 13;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Mix a base seed with a list of tags into a single stream seed.
pub fn mix(base: u64, tags: &[u64]) -> u64 {
    let mut acc = splitmix64(base);
    for &t in tags {
        acc = splitmix64(acc ^ splitmix64(t));
    }
    acc
}

/// A fresh generator for `(base, tags...)`. Same inputs, same stream.
pub fn stream(base: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(base, tags))
}
