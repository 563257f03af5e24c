use super::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Open01, StandardNormal};

/// Seeded random stream. Identical seed and call sequence give identical
/// draws on every platform.
#[derive(Clone, Debug)]
pub struct RngState {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        RngState { seed, inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Independent stream for the same seed, e.g. one per data split.
    pub fn for_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        RngState { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of 32-bit words consumed so far.
    pub fn position(&self) -> u128 {
        self.inner.get_word_pos()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform draw on the open interval (0, 1).
    pub fn uniform_open(&mut self) -> f64 {
        self.inner.sample(Open01)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.inner);
    }

    pub fn gumbel(&mut self) -> f64 {
        -(-self.uniform_open().ln()).ln()
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.inner
    }
}

pub fn sample_std_normal(rng: &mut RngState, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.normal()).collect();
    Tensor::from_vec(rows, cols, data)
}

/// Gumbel(0, 1) draws via `-ln(-ln u)`.
pub fn sample_gumbel(rng: &mut RngState, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gumbel()).collect();
    Tensor::from_vec(rows, cols, data)
}

pub fn sample_uniform(rng: &mut RngState, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.uniform_open()).collect();
    Tensor::from_vec(rows, cols, data)
}
