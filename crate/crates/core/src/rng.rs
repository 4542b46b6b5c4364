//! Seeded random source.
//!
//! xoshiro256** with 256 bits of state, seeded from a `u64` through
//! SplitMix64. Integer draws use rejection sampling so every value in the
//! range is equally likely. Float draws take the top 53 bits of one output.
//! Any implementation following these steps reproduces the same stream.

use rand_core::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: Xoshiro256StarStar,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            inner: Xoshiro256StarStar::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform over `lo..=hi`. Panics if `lo > hi`.
    pub fn int_inclusive(&mut self, lo: i64, hi: i64) -> i64 {
        assert!(lo <= hi, "empty range {lo}..={hi}");
        let span = (hi as i128 - lo as i128 + 1) as u128;
        if span > u64::MAX as u128 {
            return self.next_u64() as i64;
        }
        let span = span as u64;
        // largest multiple of span, minus one, that fits in u64
        let limit = u64::MAX - (u64::MAX % span + 1) % span;
        loop {
            let x = self.next_u64();
            if x <= limit {
                return (lo as i128 + (x % span) as i128) as i64;
            }
        }
    }

    /// Uniform over `[0, 1)` on a 2^-53 grid.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform over `[lb, ub)`; never returns `ub`. Requires `lb < ub`.
    pub fn float_half_open(&mut self, lb: f64, ub: f64) -> f64 {
        debug_assert!(lb < ub);
        let v = lb + self.unit() * (ub - lb);
        if v >= ub {
            ub.next_down().max(lb)
        } else {
            v
        }
    }
}
