//! Seeded random source.
//!
//! Every random draw in the library goes through [`RandomSource`], which wraps
//! ChaCha8 (`rand_chacha`). The ChaCha stream is value-stable across
//! platforms and crate versions, so `(seed, stream)` fully determines the
//! sequence of draws.
//!
//! Conversions from raw 64-bit words are done here rather than through
//! `rand::distributions` so that the mapping is pinned as well:
//!
//! * `uniform()` takes the top 53 bits: `(word >> 11) * 2^-53`, in `[0, 1)`.
//! * `below(n)` uses rejection sampling on the full 64-bit word.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};

pub const ALGORITHM: &str = "chacha8";

/// Stream ids used to split one experiment seed into independent sequences.
pub mod stream {
    pub const INIT: u64 = 0;
    pub const SHUFFLE: u64 = 1;
    pub const DROPOUT: u64 = 2;
    pub const TEST: u64 = 99;
}

#[derive(Clone, Debug)]
pub struct RandomSource {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        RandomSource {
            seed,
            stream,
            inner,
        }
    }

    pub fn algorithm(&self) -> &'static str {
        ALGORITHM
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> Result<f64> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidRange { lo, hi });
        }
        let v = lo + (hi - lo) * self.uniform();
        // rounding can land exactly on hi for wide ranges
        Ok(if v < hi { v } else { lo })
    }

    /// Uniform integer in `[0, n)`. Panics if `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let w = self.next_u64();
            if w < zone {
                return (w % n) as usize;
            }
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx
    }
}
