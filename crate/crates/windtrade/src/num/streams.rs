//! Deterministic, parallel-safe random substreams.
//!
//! Every stochastic component draws from `substream(seed, purpose, index)`.
//! The purpose tag separates logical uses of randomness (path simulation,
//! bootstrap, ...) so adding a new consumer never perturbs existing draws,
//! and the index selects an independent ChaCha stream per path, which is what
//! makes common-random-number comparisons and rayon-parallel simulation both
//! reproducible.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a, enough to turn a short tag into a well-mixed 64-bit value.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// splitmix64 step, the standard way to expand one u64 into a key schedule.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// An independent generator for (`seed`, `purpose`, `index`).
///
/// Identical arguments always give an identical stream, on every platform.
pub fn substream(seed: u64, purpose: &str, index: u64) -> ChaCha8Rng {
    let mut state = seed ^ fnv1a(purpose.as_bytes());
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}
