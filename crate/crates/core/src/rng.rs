//! Deterministic random number streams.
//!
//! Every random draw in the crate comes from a [`StreamRng`]: a ChaCha8
//! counter-based generator whose 64-bit stream id is derived from a
//! human-readable label. Identical `(seed, label)` pairs always yield the
//! same sequence, independent of how many other streams were consumed, so
//! parameter tensors, shuffles and synthetic data are reproducible and
//! order-independent by construction.

use rand::distributions::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;

/// FNV-1a hash of a label; maps stream names onto ChaCha stream ids.
fn label_hash(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// A named, seed-deterministic random stream.
pub struct StreamRng {
    inner: ChaCha8Rng,
    seed: u64,
}

impl StreamRng {
    /// Stream derived from `seed` and a label such as `"branch1.conv0.weight"`.
    pub fn new(seed: u64, label: &str) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(label_hash(label));
        Self { inner, seed }
    }

    /// Child stream with a label suffix; shares the root seed.
    pub fn split(&self, label: &str) -> Self {
        Self::new(self.seed, label)
    }

    /// Uniform in `[0, 1)`.
    pub fn unit<S: Scalar>(&mut self) -> S {
        S::from_real(self.inner.gen::<f64>())
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform<S: Scalar>(&mut self, lo: f64, hi: f64) -> S {
        S::from_real(lo + (hi - lo) * self.inner.gen::<f64>())
    }

    /// Standard normal draw.
    pub fn normal<S: Scalar>(&mut self) -> S {
        let v: f64 = rand_distr::StandardNormal.sample(&mut self.inner);
        S::from_real(v)
    }

    /// Uniform integer in `[0, n)`.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.inner);
    }
}
