//! Deterministic random number generation.
//!
//! Every stochastic step in the pipeline draws from a ChaCha20 stream seeded
//! explicitly, so identical seeds reproduce identical runs byte for byte.
//! Sampling helpers are implemented here directly (rather than through
//! higher-level distribution crates) to keep the draw sequence stable.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

/// Deterministic generator handed around the pipeline.
pub struct DetRng {
    inner: ChaCha20Rng,
}

impl DetRng {
    /// Creates a generator from a 64-bit seed.
    pub fn seed(seed: u64) -> Self {
        DetRng {
            inner: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    /// Derives an independent stream for a named sub-task of a master seed.
    pub fn derive(master: u64, tag: &str) -> Self {
        DetRng::seed(mix(master, tag))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw from `[0, 1)` with 53-bit resolution.
    pub fn unit_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw from `[lo, hi)`.
    pub fn range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit_f64()
    }

    /// Uniform index in `[0, n)`; rejection-sampled to avoid modulo bias.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index bound must be positive");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }
}

/// Mixes a master seed with a tag via FNV-1a, for independent sub-streams.
pub fn mix(master: u64, tag: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ master.rotate_left(17);
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^= master;
    h.wrapping_mul(0x0000_0100_0000_01b3)
}

/// FNV-1a hash of a byte string, used for stable word hashing.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
