//! A closed-form stand-in for the full pipeline.
//!
//! Images are mid-gray with a random global offset and mild texture; seeds
//! are flat gray at `0.5 + delta`. [`BrightnessTransfer`] moves an image's
//! mean brightness toward its seed's, so under the brightness oracle the gap
//! of image `I` with seed `S` is `t·(b(S) − b(I))` with `t = α/(1+α)`
//! (before clamping). The sign of a gap depends on both the seed and the
//! image, which gives an image-conditioned selector something to learn
//! beyond the per-seed mean.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{ImageSet, ImageTensor, SeedCatalog, StyleSeed};
use crate::scorer::Oracle;
use crate::synth::Synthesizer;

/// Seed offsets used by the reference synthetic task.
pub const DEFAULT_DELTAS: [f64; 8] = [0.15, 0.1, 0.05, 0.02, -0.02, -0.05, -0.1, -0.15];

/// Largest global offset of a synthetic image from mid-gray.
pub const DEFAULT_SPREAD: f64 = 0.12;

const TEXTURE: f64 = 0.03;

/// `n` images with ids `{prefix}{i:04}`: `0.5 + u + noise`, `u ~ U(−spread, spread)`.
pub fn perturbed_gray_images(prefix: &str, n: usize, size: (usize, usize), spread: f64, rng_seed: u64) -> Result<ImageSet> {
    if !(0.0..0.5 - TEXTURE).contains(&spread) {
        return Err(Error::arg(format!("spread {spread} outside [0, {})", 0.5 - TEXTURE)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let (h, w) = size;
    let mut set = ImageSet::default();
    for i in 0..n {
        let u = if spread > 0.0 { rng.random_range(-spread..spread) } else { 0.0 };
        let pixels = (0..3 * h * w)
            .map(|_| 0.5 + u + rng.random_range(-TEXTURE..=TEXTURE))
            .collect();
        set.insert(format!("{prefix}{i:04}"), ImageTensor::new(h, w, pixels)?)?;
    }
    Ok(set)
}

/// Flat gray seeds at `0.5 + delta`, scored by the brightness oracle.
pub fn brightness_seeds(deltas: &[f64], size: (usize, usize)) -> Result<SeedCatalog> {
    let seeds = deltas
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let img = ImageTensor::gray(size.0, size.1, 0.5 + d)?;
            let score = Oracle::Brightness.score(&img);
            StyleSeed::new(format!("seed-{i:04}"), img, score)
        })
        .collect::<Result<Vec<_>>>()?;
    SeedCatalog::new(seeds)
}

/// Shifts every pixel by `t·(b(seed) − b(content))`, `t = α/(1+α)`, then clamps.
#[derive(Clone, Copy, Debug, Default)]
pub struct BrightnessTransfer;

impl Synthesizer for BrightnessTransfer {
    fn synthesize(&self, content: &ImageTensor, seed: &StyleSeed, alpha: f64) -> Result<ImageTensor> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::arg(format!("alpha must be finite and >= 0, got {alpha}")));
        }
        let t = alpha / (1.0 + alpha);
        Ok(content.shifted(t * (seed.image.mean_luma() - content.mean_luma())))
    }
}

/// Adapts a [`Synthesizer`] at fixed `alpha` to the closure form used by
/// gap generation.
pub fn with_alpha<'a>(
    synth: &'a dyn Synthesizer,
    alpha: f64,
) -> impl Fn(&ImageTensor, &StyleSeed) -> Result<ImageTensor> + Sync + 'a {
    move |image, seed| synth.synthesize(image, seed, alpha)
}

/// Train/validation/test images plus a seed catalog.
#[derive(Clone, Debug)]
pub struct SyntheticTask {
    pub train: ImageSet,
    pub validation: ImageSet,
    pub test: ImageSet,
    pub catalog: SeedCatalog,
}

impl SyntheticTask {
    pub fn new(counts: (usize, usize, usize), deltas: &[f64], size: (usize, usize), rng_seed: u64) -> Result<Self> {
        Ok(Self {
            train: perturbed_gray_images("train-", counts.0, size, DEFAULT_SPREAD, rng_seed)?,
            validation: perturbed_gray_images("val-", counts.1, size, DEFAULT_SPREAD, rng_seed.wrapping_add(1))?,
            test: perturbed_gray_images("test-", counts.2, size, DEFAULT_SPREAD, rng_seed.wrapping_add(2))?,
            catalog: brightness_seeds(deltas, size)?,
        })
    }

    /// Every image of the three splits in one set.
    pub fn all_images(&self) -> Result<ImageSet> {
        let mut all = self.train.clone();
        for set in [&self.validation, &self.test] {
            for (id, img) in set.iter() {
                all.insert(id.to_string(), img.clone())?;
            }
        }
        Ok(all)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gap_on_mid_gray_is_scaled_offset() {
        let img = ImageTensor::gray(4, 4, 0.5).unwrap();
        let seeds = brightness_seeds(&[0.1, -0.2], (4, 4)).unwrap();
        for (seed, d) in seeds.seeds().iter().zip([0.1, -0.2]) {
            let out = BrightnessTransfer.synthesize(&img, seed, 1.0).unwrap();
            let gap = Oracle::Brightness.score(&out) - Oracle::Brightness.score(&img);
            assert!((gap - d / 2.0).abs() < 1e-12, "{gap} vs {d}");
        }
    }

    #[test]
    fn zero_alpha_is_identity() {
        let img = perturbed_gray_images("x", 1, (4, 4), 0.1, 3).unwrap().images()[0].clone();
        let seed = &brightness_seeds(&[0.15], (4, 4)).unwrap().seeds()[0].clone();
        assert_eq!(BrightnessTransfer.synthesize(&img, seed, 0.0).unwrap(), img);
        assert!(BrightnessTransfer.synthesize(&img, seed, -1.0).is_err());
    }

    #[test]
    fn images_are_reproducible_and_bounded() {
        let a = perturbed_gray_images("x", 5, (6, 6), DEFAULT_SPREAD, 9).unwrap();
        let b = perturbed_gray_images("x", 5, (6, 6), DEFAULT_SPREAD, 9).unwrap();
        assert_eq!(a.images(), b.images());
        for img in a.images() {
            assert!((img.mean_luma() - 0.5).abs() < DEFAULT_SPREAD + TEXTURE);
        }
    }
}
