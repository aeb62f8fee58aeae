//! Deterministic per-trajectory random number streams.
//!
//! Every trajectory draws from its own [`RngStream`], fully determined by an
//! ensemble seed and a 64-bit stream index. The generator is pinned to
//! ChaCha8 (via `rand_chacha`, byte-for-byte reproducible on every platform);
//! the 256-bit ChaCha key is derived from `(seed, stream)` with SplitMix64:
//!
//! ```text
//! base   = splitmix64(seed)            // one step from state `seed`
//! state  = base ^ stream
//! key    = next four splitmix64 outputs from `state`
//! ```
//!
//! Distinct stream indices under one seed therefore yield decorrelated,
//! independently-seeded generators, and `(seed, stream)` pins the entire
//! draw sequence bit-for-bit regardless of which thread runs the trajectory.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN_GAMMA);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A deterministic 64-bit generator keyed by (seed, stream index).
#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha8Rng,
    seed: u64,
    stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut state = seed;
        let base = splitmix64(&mut state);
        let mut state = base ^ stream;
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        RngStream {
            rng: ChaCha8Rng::from_seed(key),
            seed,
            stream,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 random mantissa bits.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in the open interval `(0, 1)`: rejects exact zero, so
    /// `ln` of the result is always finite.
    #[inline]
    pub fn next_open01(&mut self) -> f64 {
        loop {
            let v = self.next_f64();
            if v > 0.0 {
                return v;
            }
        }
    }
}
