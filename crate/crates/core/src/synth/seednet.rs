//! Per-seed feed-forward stylization networks.
//!
//! Each network is a residual three-layer convolutional stack,
//! `y = clamp(x + r(x), 0, 1)`, whose last layer starts at zero so an
//! untrained network is the identity.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{FeatureExtractor, Objective, StyleTarget};
use super::SynthesisConfig;
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::image::{ImageTensor, StyleSeed, CHANNELS};
use crate::nn::{Activation, Adam, Conv, Tensor3};

const HIDDEN: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct SeedNetwork {
    seed_id: String,
    config: SynthesisConfig,
    extractor_seed: u64,
    convs: [Conv; 3],
    params: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SeedNetworkManifest {
    seed_id: String,
    architecture: String,
    extractor_seed: u64,
    rng_seed: u64,
    training: SynthesisConfig,
}

const ARCHITECTURE: &str = "residual-conv3x3-3-8-8-3-relu";

struct Cache {
    input: Tensor3,
    h1: Tensor3,
    h2: Tensor3,
    pre_clamp: Tensor3,
}

impl SeedNetwork {
    fn layout() -> ([Conv; 3], usize) {
        let c1 = Conv::new(CHANNELS, HIDDEN, 3, 1, 0);
        let c2 = Conv::new(HIDDEN, HIDDEN, 3, 1, c1.end());
        let c3 = Conv::new(HIDDEN, CHANNELS, 3, 1, c2.end());
        let total = c3.end();
        ([c1, c2, c3], total)
    }

    fn init(seed_id: &str, config: &SynthesisConfig, extractor_seed: u64) -> Self {
        let (convs, total) = Self::layout();
        let mut params = vec![0.0; total];
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        convs[0].init(&mut params, &mut rng, 2f64.sqrt());
        convs[1].init(&mut params, &mut rng, 2f64.sqrt());
        Self {
            seed_id: seed_id.to_string(),
            config: config.clone(),
            extractor_seed,
            convs,
            params,
        }
    }

    pub fn seed_id(&self) -> &str {
        &self.seed_id
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn model_ref(&self) -> String {
        format!("seednet-{}", self.seed_id)
    }

    fn forward(&self, x: &Tensor3) -> Cache {
        let centered = x.map(|v| v - 0.5);
        let mut h1 = self.convs[0].forward(&self.params, &centered);
        Activation::Relu.forward(&mut h1);
        let mut h2 = self.convs[1].forward(&self.params, &h1);
        Activation::Relu.forward(&mut h2);
        let mut pre_clamp = self.convs[2].forward(&self.params, &h2);
        pre_clamp.data.iter_mut().zip(&x.data).for_each(|(r, v)| *r += v);
        Cache {
            input: centered,
            h1,
            h2,
            pre_clamp,
        }
    }

    fn backward(&self, cache: &Cache, d_out: &Tensor3, grads: &mut [f64]) {
        let mut g = d_out.clone();
        for (gv, v) in g.data.iter_mut().zip(&cache.pre_clamp.data) {
            if !(0.0..=1.0).contains(v) {
                *gv = 0.0;
            }
        }
        let mut g2 = self.convs[2].backward(&self.params, &cache.h2, &g, grads, true).unwrap();
        Activation::Relu.backward(&cache.h2.data, &mut g2.data);
        let mut g1 = self.convs[1].backward(&self.params, &cache.h1, &g2, grads, true).unwrap();
        Activation::Relu.backward(&cache.h1.data, &mut g1.data);
        self.convs[0].backward(&self.params, &cache.input, &g1, grads, false);
    }

    /// Single forward pass; output has the input's dimensions.
    pub fn apply(&self, image: &ImageTensor) -> Result<ImageTensor> {
        let out = self.forward(&Tensor3::from_image(image)).pre_clamp;
        ImageTensor::from_clamped(out.h, out.w, out.data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let manifest = SeedNetworkManifest {
            seed_id: self.seed_id.clone(),
            architecture: ARCHITECTURE.into(),
            extractor_seed: self.extractor_seed,
            rng_seed: self.config.rng_seed,
            training: self.config.clone(),
        };
        checkpoint::save(path, &self.params, &manifest)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (params, manifest): (Vec<f64>, SeedNetworkManifest) = checkpoint::load(path)?;
        if manifest.architecture != ARCHITECTURE {
            return Err(Error::Checkpoint(format!("unknown architecture {}", manifest.architecture)));
        }
        let (convs, total) = Self::layout();
        if params.len() != total {
            return Err(Error::Checkpoint(format!("expected {total} parameters, got {}", params.len())));
        }
        Ok(Self {
            seed_id: manifest.seed_id,
            config: manifest.training,
            extractor_seed: manifest.extractor_seed,
            convs,
            params,
        })
    }
}

/// Trains a network for `seed` with Adam on the synthesis objective, one
/// randomly drawn training image per step. `config.step_size` is the
/// learning rate.
pub fn train_seed_network(
    seed: &StyleSeed,
    training_images: &[ImageTensor],
    fx: &FeatureExtractor,
    config: &SynthesisConfig,
) -> Result<SeedNetwork> {
    if training_images.is_empty() {
        return Err(Error::arg("seed network training needs at least one image"));
    }
    config.validate()?;
    let mut net = SeedNetwork::init(&seed.seed_id, config, fx.rng_seed());
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed.wrapping_add(1));
    let mut opt = Adam::new(net.params.len(), config.step_size);
    let mut grads = vec![0.0; net.params.len()];
    let mut targets: Vec<((usize, usize), StyleTarget)> = Vec::new();
    for step in 0..config.iterations {
        let img = training_images.choose(&mut rng).expect("non-empty");
        let target = match targets.iter().find(|(dims, _)| *dims == img.dims()) {
            Some((_, t)) => t.clone(),
            None => {
                let t = StyleTarget::from_image(fx, &seed.image.resize_to(img.dims())?)?;
                targets.push((img.dims(), t.clone()));
                t
            }
        };
        let x = Tensor3::from_image(img);
        let objective = Objective::new(fx, &x, target, config.alpha)?;
        let cache = net.forward(&x);
        let y = Tensor3 {
            data: cache.pre_clamp.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            ..cache.pre_clamp.clone()
        };
        let (loss, d_y) = objective.value_and_grad(&y)?;
        if !loss.is_finite() {
            return Err(Error::Numerical {
                iteration: step,
                detail: format!("seed network loss became {loss}"),
            });
        }
        grads.fill(0.0);
        net.backward(&cache, &d_y, &mut grads);
        opt.step(&mut net.params, &grads);
    }
    Ok(net)
}

/// Directory of seed-network checkpoints addressed by model reference.
#[derive(Clone, Debug)]
pub struct SeedNetworkStore {
    dir: PathBuf,
}

impl SeedNetworkStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, model_ref: &str) -> PathBuf {
        self.dir.join(format!("{model_ref}.ckpt"))
    }

    /// Persists `net` and returns its model reference.
    pub fn save(&self, net: &SeedNetwork) -> Result<String> {
        fs::create_dir_all(&self.dir)?;
        let model_ref = net.model_ref();
        net.save(self.path(&model_ref))?;
        Ok(model_ref)
    }

    pub fn load(&self, model_ref: &str) -> Result<SeedNetwork> {
        let path = self.path(model_ref);
        if !path.exists() {
            return Err(Error::NotFound(format!("seed network {model_ref}")));
        }
        SeedNetwork::load(path)
    }

    pub fn apply(&self, model_ref: &str, image: &ImageTensor) -> Result<ImageTensor> {
        self.load(model_ref)?.apply(image)
    }
}

/// Resolves `model_ref` in `store` and runs one forward pass.
pub fn apply_seed_network(store: &SeedNetworkStore, model_ref: &str, image: &ImageTensor) -> Result<ImageTensor> {
    store.apply(model_ref, image)
}
