//! Named random substreams.
//!
//! Each consumer draws from its own ChaCha stream derived from one seed, so
//! switching a loss term off never shifts the draws seen by the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init,
    Data,
    DiffusionT,
    DiffusionEps,
    DistillT,
    DistillEps,
    AuxT,
    AuxNoise,
}

const STREAM_COUNT: usize = 8;

impl Stream {
    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone)]
pub struct Streams {
    rngs: [ChaCha8Rng; STREAM_COUNT],
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        let rngs = std::array::from_fn(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(i as u64 + 1);
            r
        });
        Self { rngs }
    }

    pub fn get(&mut self, s: Stream) -> &mut ChaCha8Rng {
        &mut self.rngs[s.index()]
    }
}

/// A single seeded generator, for callers outside the training loop.
pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `rows × cols` standard-normal matrix.
pub fn normal_matrix<R: rand::Rng>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    let values = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::matrix(rows, cols, values).expect("shape matches length")
}

/// `n` timesteps drawn uniformly from `1..=horizon`.
pub fn uniform_timesteps<R: rand::Rng>(rng: &mut R, n: usize, horizon: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(1..=horizon)).collect()
}
