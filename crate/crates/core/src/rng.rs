//! Deterministic, splittable random stream.
//!
//! Backed by ChaCha8 in counter mode. A generator is identified by a 64-bit
//! seed and a 64-bit stream id; [`Rng::split`] derives an independent child
//! stream without consuming from the parent, so ensemble members and worker
//! threads can draw in any order and still reproduce bit-for-bit.

use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Seeded counter-based generator.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child stream `id`. Children of distinct ids never overlap, and the
    /// parent's own position is untouched.
    pub fn split(&self, id: u64) -> Rng {
        // Stream ids form a tree: child = parent * 2^16 + id + 1, folded
        // through a mixer so deep trees stay distinct.
        let child = mix64(self.stream.wrapping_mul(0x1_0000).wrapping_add(id + 1));
        Self::with_stream(self.seed, child)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// `amount` distinct indices from `0..n`, in draw order.
    pub fn sample_indices(&mut self, n: usize, amount: usize) -> Vec<usize> {
        rand::seq::index::sample(&mut self.inner, n, amount.min(n)).into_vec()
    }
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Frozen from the first run; any change here breaks reproducibility of
    // every stored experiment.
    const GOLDEN_SEED_42: [u64; 16] = [
        12578764544318200737,
        17529487244874322312,
        7886285670807131020,
        11572758976476374866,
        5323617429756461744,
        2766252901828231838,
        5682345367224914708,
        14828835203913492612,
        14227028876630821888,
        4401121311800897944,
        9350043436605376040,
        16635332319643196323,
        17653354571726536749,
        10938523927967171405,
        13443959161786668970,
        3304483495961147300,
    ];

    #[test]
    fn golden_stream() {
        let mut rng = Rng::new(42);
        let got: Vec<u64> = (0..16).map(|_| rng.next_u64()).collect();
        assert_eq!(got, GOLDEN_SEED_42);
    }

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(7);
        let mut b = Rng::new(7);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn split_is_independent_of_parent_position() {
        let parent = Rng::new(3);
        let mut advanced = parent.clone();
        for _ in 0..17 {
            advanced.next_u64();
        }
        let mut c1 = parent.split(5);
        let mut c2 = advanced.split(5);
        assert_eq!(c1.next_u64(), c2.next_u64());
        let mut other = parent.split(6);
        let mut c1 = parent.split(5);
        assert_ne!(c1.next_u64(), other.next_u64());
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut rng = Rng::new(1);
        for _ in 0..10_000 {
            let u = rng.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn sample_indices_distinct() {
        let mut rng = Rng::new(9);
        let mut idx = rng.sample_indices(10, 4);
        assert_eq!(idx.len(), 4);
        idx.sort();
        idx.dedup();
        assert_eq!(idx.len(), 4);
        assert_eq!(rng.sample_indices(3, 10).len(), 3);
    }
}
