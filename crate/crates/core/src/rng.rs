//! The one seedable, splittable generator every stochastic choice draws from.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Clone, Debug)]
pub struct BfRng {
    inner: ChaCha8Rng,
}

impl BfRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent child stream. Consumes one draw from the parent.
    pub fn split(&mut self) -> BfRng {
        BfRng::new(self.inner.next_u64())
    }

    /// Child stream keyed by an index, without advancing the parent.
    pub fn derive(&self, index: u64) -> BfRng {
        let mut c = self.inner.clone();
        c.set_stream(index.wrapping_add(1));
        BfRng::new(c.next_u64())
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.inner.random::<f64>() < p
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// `k` distinct indices from `0..n`, in sampling order.
    pub fn choose_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        rand::seq::index::sample(&mut self.inner, n, k.min(n)).into_vec()
    }
}
