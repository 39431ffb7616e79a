//! Seeded generator used for toy base models and adapter initialization.
//!
//! The algorithm is fixed so that any implementation can reproduce the same
//! weights:
//!
//! * state: xoshiro256** seeded from a `u64` by four SplitMix64 outputs;
//! * uniform: `(next_u64 >> 11) · 2^-53`, in `[0, 1)`;
//! * normal: Box–Muller cosine branch, `u1 = 1 - uniform()` then
//!   `u2 = uniform()`, `z = sqrt(-2 ln u1) · cos(2π u2)`. One normal per two
//!   64-bit draws; the sine branch is discarded.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

#[derive(Debug, Clone)]
pub struct ModelRng(Xoshiro256StarStar);

impl ModelRng {
    pub fn new(seed: u64) -> Self {
        Self(Xoshiro256StarStar::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}
