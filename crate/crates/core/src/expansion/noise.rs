use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::diffcore::Tensor;

/// What a noise stream is used for. Streams for different purposes never
/// overlap, so e.g. model noise cannot perturb policy samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Policy = 1,
    Model = 2,
    Member = 3,
}

/// Counter-addressed random streams: the draw for `(purpose, key)` depends
/// only on the seed, never on what was drawn before. Estimators index keys
/// by rollout time, which gives common random numbers across estimators
/// that visit the same time step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NoiseSource {
    pub seed: u64,
}

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn rng(&self, purpose: Purpose, key: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((purpose as u64) << 56) ^ key);
        rng
    }

    pub fn normal(&self, purpose: Purpose, key: u64, rows: usize, cols: usize) -> Tensor {
        let mut rng = self.rng(purpose, key);
        let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        Tensor::new(rows, cols, data).unwrap()
    }

    pub fn uniform(&self, purpose: Purpose, key: u64, n: usize) -> Vec<f64> {
        let mut rng = self.rng(purpose, key);
        (0..n).map(|_| rng.random::<f64>()).collect()
    }

    pub fn indices(&self, purpose: Purpose, key: u64, n: usize, bound: usize) -> Vec<usize> {
        let mut rng = self.rng(purpose, key);
        (0..n).map(|_| rng.random_range(0..bound)).collect()
    }
}
