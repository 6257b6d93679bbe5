//! Seeded random streams.
//!
//! All randomness in the crate comes from [`Stream`], a thin wrapper around
//! PCG-XSL-RR 128/64 (`rand_pcg::Pcg64`) seeded through
//! `SeedableRng::seed_from_u64`. Uniform doubles take the top 53 bits of each
//! 64-bit output; normals use the Box–Muller transform and cache the second
//! variate. Given a seed, every draw is bit-reproducible on IEEE-754 targets.

use rand_core::{Rng, SeedableRng};
use rand_pcg::Pcg64;

use crate::Scalar;

const TWO_POW_NEG_53: f64 = 1.0 / (1u64 << 53) as f64;

#[derive(Debug, Clone)]
pub struct Stream {
    inner: Pcg64,
    spare_normal: Option<f64>,
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Pcg64::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    /// Independent stream derived from `(seed, salt)`, used to give each
    /// sub-experiment its own generator.
    pub fn derived(seed: u64, salt: u64) -> Self {
        // splitmix64 finalizer over the pair
        let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        Self::new(z ^ (z >> 31))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * TWO_POW_NEG_53
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform index in `0..n` (Lemire's widening multiply, unbiased enough
    /// for shuffling small lists).
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index range must be non-empty");
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard normal via Box–Muller.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // u1 in (0, 1] so the log is finite
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn fill_normal<T: Scalar>(&mut self, out: &mut [T], std: f64) {
        for v in out {
            *v = T::of(std * self.normal());
        }
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }
}
