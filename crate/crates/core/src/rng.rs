//! Keyed deterministic draws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Combines a run seed with a key (e.g. a request id) into an independent seed.
pub fn derive_seed(seed: u64, key: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed
        .wrapping_add(key.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One uniform draw in `[0, 1)` from a keyed stream.
pub fn unit_f64(seed: u64) -> f64 {
    ChaCha8Rng::seed_from_u64(seed).random::<f64>()
}
