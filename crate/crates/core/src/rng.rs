//! Named deterministic random streams.
//!
//! Every source of randomness in the workspace is an `RngStream` identified by
//! a (seed, name) pair. Identical pairs yield identical draw sequences on any
//! platform; the draw counter makes stream states checkpointable.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use sha2::{Digest, Sha256};

use crate::Real;

const INV_2P53: f64 = 1.0 / 9007199254740992.0; // 2^-53

/// A counted, named ChaCha8 stream. The key is derived from the seed and the
/// stream name, so differently named streams are statistically independent.
#[derive(Debug, Clone)]
pub struct RngStream {
    name: String,
    seed: u64,
    draws: u64,
    rng: ChaCha8Rng,
}

/// Snapshot of a stream, sufficient to reconstruct it exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngState {
    pub name: String,
    pub seed: u64,
    pub draws: u64,
}

impl RngStream {
    pub fn new(seed: u64, name: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        hasher.update(name.as_bytes());
        let key: [u8; 32] = hasher.finalize().into();
        RngStream {
            name: name.to_owned(),
            seed,
            draws: 0,
            rng: ChaCha8Rng::from_seed(key),
        }
    }

    /// Derive a child stream; the child's name is `parent/child`.
    pub fn fork(&self, child: &str) -> Self {
        RngStream::new(self.seed, &format!("{}/{}", self.name, child))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn draws(&self) -> u64 {
        self.draws
    }

    pub fn state(&self) -> RngState {
        RngState {
            name: self.name.clone(),
            seed: self.seed,
            draws: self.draws,
        }
    }

    /// Reconstruct a stream at an exact draw position.
    pub fn restore(state: &RngState) -> Self {
        let mut s = RngStream::new(state.seed, &state.name);
        // One u64 draw consumes two 32-bit words of the ChaCha stream.
        s.rng.set_word_pos(state.draws as u128 * 2);
        s.draws = state.draws;
        s
    }

    pub fn next_u64(&mut self) -> u64 {
        self.draws += 1;
        self.rng.next_u64()
    }

    /// Uniform in [0, 1) with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * INV_2P53
    }

    /// Standard normal via Box-Muller; consumes exactly two u64 draws.
    pub fn normal(&mut self) -> Real {
        let u1 = self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * (1.0 - u1).ln()).sqrt();
        (r * (std::f64::consts::TAU * u2).cos()) as Real
    }

    /// Uniform index in [0, bound). Multiply-shift map; bias is O(bound/2^64).
    pub fn below(&mut self, bound: usize) -> usize {
        debug_assert!(bound > 0);
        ((self.next_u64() as u128 * bound as u128) >> 64) as usize
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }

    /// `k` distinct indices drawn from [0, n).
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot sample {k} distinct indices from {n}");
        let mut all: Vec<usize> = (0..n).collect();
        self.shuffle(&mut all);
        all.truncate(k);
        all
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_key_same_sequence() {
        let mut a = RngStream::new(7, "init");
        let mut b = RngStream::new(7, "init");
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn different_names_diverge() {
        let mut a = RngStream::new(7, "init");
        let mut b = RngStream::new(7, "batch");
        let same = (0..16).filter(|_| a.next_u64() == b.next_u64()).count();
        assert!(same < 3);
    }

    #[test]
    fn restore_resumes_exactly() {
        let mut a = RngStream::new(42, "s");
        for _ in 0..37 {
            a.normal();
        }
        let state = a.state();
        let mut b = RngStream::restore(&state);
        for _ in 0..50 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        assert_eq!(a.draws(), b.draws());
    }

    #[test]
    fn normal_is_finite_and_centered() {
        let mut s = RngStream::new(1, "n");
        let xs: Vec<Real> = (0..20_000).map(|_| s.normal()).collect();
        assert!(xs.iter().all(|x| x.is_finite()));
        let mean = xs.iter().sum::<Real>() / xs.len() as Real;
        assert!(mean.abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn shuffle_is_deterministic() {
        let mut a = RngStream::new(3, "perm");
        let mut b = RngStream::new(3, "perm");
        let mut xs: Vec<u32> = (0..50).collect();
        let mut ys: Vec<u32> = (0..50).collect();
        a.shuffle(&mut xs);
        b.shuffle(&mut ys);
        assert_eq!(xs, ys);
    }
}
