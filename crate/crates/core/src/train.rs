use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::PREDICTOR_SIZE;
use crate::nn::Backbone;

/// Mini-batch SGD settings shared by the scorer and selector trainers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Number of optimizer steps.
    pub iterations: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub rng_seed: u64,
    pub backbone: Backbone,
    pub input_size: (usize, usize),
    /// Validation cadence in steps; only used when a validation set is given.
    pub eval_every: usize,
    /// Stop after this many evaluations without improvement.
    pub patience: Option<usize>,
}

impl TrainConfig {
    /// Scorer defaults: momentum 0.9, learning rate 1e-3, batch 256.
    pub fn scorer() -> Self {
        Self {
            iterations: 2000,
            learning_rate: 1e-3,
            momentum: 0.9,
            batch_size: 256,
            rng_seed: 0,
            backbone: Backbone::Small,
            input_size: PREDICTOR_SIZE,
            eval_every: 100,
            patience: None,
        }
    }

    /// Selector defaults: momentum 0.9, learning rate 1e-3, batch 64.
    pub fn selector() -> Self {
        Self {
            batch_size: 64,
            patience: Some(5),
            ..Self::scorer()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::arg("batch size must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::arg("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::arg("momentum must lie in [0, 1)"));
        }
        if self.eval_every == 0 {
            return Err(Error::arg("eval_every must be positive"));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::selector()
    }
}

/// Epoch-wise shuffled mini-batches; batches never straddle epochs.
pub(crate) struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(n: usize, rng_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Self { order, pos: 0, rng }
    }

    pub fn next_batch(&mut self, size: usize) -> &[usize] {
        let size = size.min(self.order.len());
        if self.pos + size > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let batch = &self.order[self.pos..self.pos + size];
        self.pos += size;
        batch
    }
}
