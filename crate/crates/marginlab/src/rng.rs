//! Counter-based deterministic RNG streams.
//!
//! Every independent unit of work (a dataset row, a sweep trial, a Monte
//! Carlo chunk) gets its own stream derived from a master seed and one or
//! more counters, so parallel execution order never affects results.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; good avalanche, cheap, stable across platforms.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Mixes a master seed with counters into a single stream seed.
pub fn mix(seed: u64, counters: &[u64]) -> u64 {
    let mut acc = splitmix64(seed ^ 0x6c62_272e_07bb_0142);
    for &c in counters {
        acc = splitmix64(acc ^ splitmix64(c.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    acc
}

/// An independent RNG stream for the given (seed, counters) coordinates.
pub fn stream(seed: u64, counters: &[u64]) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut state = mix(seed, counters);
    for chunk in key.chunks_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
