//! Style transfer: `I_gs = S(I_g, S_s)` with a content/style weight `alpha`.
//!
//! The reference path optimizes pixels directly ([`synthesize`]); the fast
//! path trains one feed-forward network per seed ([`seednet`]).

mod features;
pub mod seednet;

use serde::{Deserialize, Serialize};

pub use features::{
    content_loss, gram_matrix, style_loss, FeatureExtractor, Gram, LossParts, Objective, StyleTarget, STYLE_SCALE,
};
pub use seednet::{apply_seed_network, train_seed_network, SeedNetwork, SeedNetworkStore};

use crate::error::{Error, Result};
use crate::image::{ImageTensor, StyleSeed, SYNTHESIS_SIZE};
use crate::nn::Tensor3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    /// Style weight; 0 reproduces the content image.
    pub alpha: f64,
    /// Optimizer iterations (or training steps for seed networks).
    pub iterations: usize,
    /// Initial pixel step for the optimizer, learning rate for seed networks.
    pub step_size: f64,
    pub rng_seed: u64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            iterations: 100,
            step_size: 0.05,
            rng_seed: 0,
        }
    }
}

impl SynthesisConfig {
    pub fn with_alpha(&self, alpha: f64) -> Self {
        Self {
            alpha,
            ..self.clone()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::arg(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::arg("step size must be positive"));
        }
        Ok(())
    }
}

/// Result of a pixel optimization run.
#[derive(Clone, Debug)]
pub struct SynthesisOutcome {
    pub image: ImageTensor,
    /// Objective before the first step and after every accepted step.
    pub history: Vec<f64>,
    pub final_loss: LossParts,
}

const MAX_BACKTRACKS: usize = 40;

/// Projected gradient descent on `content_loss + alpha * style_loss`,
/// starting from the content image, with backtracking on the step length.
///
/// Steps move along the gradient scaled to unit max-norm, so the step
/// length is in pixel units. A step is accepted only if it lowers the
/// objective; the step grows after acceptance and halves on rejection.
pub fn synthesize_detailed(
    content: &ImageTensor,
    seed: &StyleSeed,
    fx: &FeatureExtractor,
    config: &SynthesisConfig,
) -> Result<SynthesisOutcome> {
    config.validate()?;
    let style_image = seed.image.resize_to(content.dims())?;
    let target = StyleTarget::from_image(fx, &style_image)?;
    let start = Tensor3::from_image(content);
    let objective = Objective::new(fx, &start, target, config.alpha)?;

    let mut x = start;
    let (mut value, mut grad) = objective.value_and_grad(&x)?;
    if !value.is_finite() {
        return Err(Error::Numerical {
            iteration: 0,
            detail: format!("initial objective is {value}"),
        });
    }
    let mut history = vec![value];
    let mut step = config.step_size;
    'outer: for iteration in 1..=config.iterations {
        let scale = grad.data.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if scale == 0.0 {
            break;
        }
        if !scale.is_finite() {
            return Err(Error::Numerical {
                iteration,
                detail: "non-finite gradient".into(),
            });
        }
        for _ in 0..MAX_BACKTRACKS {
            let candidate = Tensor3 {
                data: x
                    .data
                    .iter()
                    .zip(&grad.data)
                    .map(|(v, g)| (v - step * g / scale).clamp(0.0, 1.0))
                    .collect(),
                ..x.clone()
            };
            if candidate.data == x.data {
                break 'outer;
            }
            let trial = objective.value(&candidate)?;
            if !trial.is_finite() {
                return Err(Error::Numerical {
                    iteration,
                    detail: format!("objective became {trial}"),
                });
            }
            if trial < value {
                x = candidate;
                step *= 1.5;
                (value, grad) = objective.value_and_grad(&x)?;
                history.push(value);
                continue 'outer;
            }
            step *= 0.5;
        }
        break;
    }
    let final_loss = objective.parts(&x)?;
    let image = ImageTensor::from_clamped(x.h, x.w, x.data)?;
    Ok(SynthesisOutcome {
        image,
        history,
        final_loss,
    })
}

/// Stylizes `content` with `seed`; see [`synthesize_detailed`].
pub fn synthesize(
    content: &ImageTensor,
    seed: &StyleSeed,
    fx: &FeatureExtractor,
    config: &SynthesisConfig,
) -> Result<ImageTensor> {
    Ok(synthesize_detailed(content, seed, fx, config)?.image)
}

/// Anything that can stylize an image with a seed at a given `alpha`.
pub trait Synthesizer: Send + Sync {
    fn synthesize(&self, content: &ImageTensor, seed: &StyleSeed, alpha: f64) -> Result<ImageTensor>;
}

/// Production synthesizer: runs the seed's feed-forward network when it has
/// one and a store is attached, else optimizes pixels at `size`.
pub struct StyleTransfer {
    pub extractor: FeatureExtractor,
    pub config: SynthesisConfig,
    pub size: (usize, usize),
    pub networks: Option<SeedNetworkStore>,
}

impl StyleTransfer {
    pub fn new(extractor: FeatureExtractor, config: SynthesisConfig) -> Self {
        Self {
            extractor,
            config,
            size: SYNTHESIS_SIZE,
            networks: None,
        }
    }

    pub fn with_size(mut self, size: (usize, usize)) -> Self {
        self.size = size;
        self
    }

    pub fn with_networks(mut self, store: SeedNetworkStore) -> Self {
        self.networks = Some(store);
        self
    }
}

impl Synthesizer for StyleTransfer {
    fn synthesize(&self, content: &ImageTensor, seed: &StyleSeed, alpha: f64) -> Result<ImageTensor> {
        let content = content.resize_to(self.size)?;
        if let (Some(store), Some(model_ref)) = (&self.networks, &seed.model_ref) {
            return store.apply(model_ref, &content);
        }
        synthesize(&content, seed, &self.extractor, &self.config.with_alpha(alpha))
    }
}
