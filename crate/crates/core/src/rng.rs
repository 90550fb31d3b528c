//! Reproducible counter-based uniform streams.
//!
//! A [`Stream`] is a ChaCha8 generator (a counter-mode block function, so the
//! output depends only on key and position) keyed from a 64-bit value. Keys
//! come from [`derive_stream`], which mixes base seed and replicate index with
//! the SplitMix64 finalizer; the 256-bit ChaCha key is `mix64(key + j·γ)` for
//! `j = 0..4`. ChaCha output is value-stable across platforms and releases, so
//! a given `(seed, index)` always yields the same uniforms.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const SUBSTREAM_SALT: u64 = 0x8CB9_2BA7_2F3D_8DD7;

/// SplitMix64 finalizer: a bijective 64-bit avalanche mix.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Stream {
    key: u64,
    rng: ChaCha8Rng,
}

/// Stream for replicate `index` under `base_seed`, keyed by
/// `mix64(mix64(base_seed) ^ mix64(index + γ))` with `γ` the golden-ratio
/// increment. Distinct indices give unrelated keys.
pub fn derive_stream(base_seed: u64, index: u64) -> Stream {
    Stream::keyed(mix64(mix64(base_seed) ^ mix64(index.wrapping_add(GOLDEN_GAMMA))))
}

impl Stream {
    /// Stream with `index = 0`.
    pub fn new(seed: u64) -> Self {
        derive_stream(seed, 0)
    }

    fn keyed(key: u64) -> Self {
        let mut seed = [0u8; 32];
        for (j, chunk) in seed.chunks_exact_mut(8).enumerate() {
            let word = mix64(key.wrapping_add((j as u64).wrapping_mul(GOLDEN_GAMMA)));
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        Stream {
            key,
            rng: ChaCha8Rng::from_seed(seed),
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform variate in the open interval (0, 1), 53 bits of resolution.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Integer uniform on `0..n`; `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        // Lemire's multiply-shift; bias is below 2^-64 * n and irrelevant here.
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    /// Independent child stream keyed by `k`. Does not advance `self`.
    pub fn substream(&self, k: u64) -> Stream {
        Stream::keyed(mix64(self.key ^ mix64(k.wrapping_add(SUBSTREAM_SALT))))
    }
}
