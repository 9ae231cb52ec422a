//! Seedable PRNG with the samplers used across the simulation lab.
//!
//! Streams are ChaCha12 generators; child streams are derived from a master
//! seed with a SplitMix64 mix so parallel and sequential replication runs
//! see identical draws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Gamma as GammaDist, InverseGaussian, Normal, StudentT};

pub struct Prng {
    inner: ChaCha12Rng,
}

/// SplitMix64 step; the standard finalizer constants.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Derive a child seed for stream `index` from a master seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut s = master ^ index.wrapping_mul(0xA24BAED4963EE407);
    let a = splitmix64(&mut s);
    let b = splitmix64(&mut s);
    a ^ b.rotate_left(17)
}

impl Prng {
    pub fn new(seed: u64) -> Self {
        Prng {
            inner: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    /// Independent child stream; deterministic in (parent seed, index).
    pub fn derive(master: u64, index: u64) -> Self {
        Prng::new(derive_seed(master, index))
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        Normal::new(0.0, 1.0).unwrap().sample(&mut self.inner)
    }

    pub fn normal(&mut self, mean: f64, var: f64) -> f64 {
        Normal::new(mean, var.sqrt()).unwrap().sample(&mut self.inner)
    }

    /// Gamma with the given shape and scale (Marsaglia–Tsang under the hood).
    pub fn gamma(&mut self, shape: f64, scale: f64) -> f64 {
        GammaDist::new(shape, scale).unwrap().sample(&mut self.inner)
    }

    /// Inverse Gaussian with mean `mu` and shape `lambda`
    /// (Michael–Schucany–Haas transform under the hood).
    pub fn inverse_gaussian(&mut self, mu: f64, lambda: f64) -> f64 {
        InverseGaussian::new(mu, lambda)
            .unwrap()
            .sample(&mut self.inner)
    }

    /// Student-t with `df` degrees of freedom.
    pub fn student_t(&mut self, df: f64) -> f64 {
        StudentT::new(df).unwrap().sample(&mut self.inner)
    }

    pub fn pick<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.inner.gen_range(0..items.len())]
    }
}
