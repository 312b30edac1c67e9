//! Seedable noise streams.
//!
//! Every run owns one [`NoiseSource`]. The stream is ChaCha8 keyed by the
//! seed, so a given `(seed, draw index)` yields the same value on every
//! platform and thread placement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct NoiseSource {
    seed: u64,
    position: u64,
    rng: ChaCha8Rng,
}

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            position: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of scalar normal draws emitted so far.
    pub fn position(&self) -> u64 {
        self.position
    }

    pub fn normal(&mut self) -> f64 {
        self.position += 1;
        self.rng.sample(StandardNormal)
    }

    pub fn normal_vec(&mut self, dim: usize) -> Vec<f64> {
        (0..dim).map(|_| self.normal()).collect()
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.normal();
        }
    }

    /// Uniform integer in `[lo, hi]`. Does not advance the normal-draw counter.
    pub fn uniform_int(&mut self, lo: usize, hi: usize) -> usize {
        self.rng.random_range(lo..=hi)
    }

    /// Uniform real in `[lo, hi)`. Does not advance the normal-draw counter.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.random_range(lo..hi)
    }
}
