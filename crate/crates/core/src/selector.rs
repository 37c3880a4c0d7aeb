//! Seed selector: regresses the vector of per-seed memorability gaps from
//! an image, trained with a loss that ignores unobserved pairs.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::gapgen::GapMatrix;
use crate::image::{ImageSet, ImageTensor};
use crate::nn::{ConvRegressor, Head, MomentumSgd, RegressorArch, Tensor3};
use crate::train::{BatchSampler, TrainConfig};

fn check_lengths(a: usize, b: usize, c: usize) -> Result<()> {
    if a != b || a != c {
        return Err(Error::arg(format!("length mismatch: {a}, {b}, {c}")));
    }
    Ok(())
}

/// `Σ_s mask[s]·(predicted[s] − target[s])²`.
pub fn masked_loss(predicted: &[f64], target: &[f64], mask: &[bool]) -> Result<f64> {
    check_lengths(predicted.len(), target.len(), mask.len())?;
    Ok(predicted
        .iter()
        .zip(target)
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((p, t), _)| (p - t).powi(2))
        .sum())
}

/// Gradient of [`masked_loss`] with respect to `predicted`; unobserved
/// components are exactly zero.
pub fn masked_loss_grad(predicted: &[f64], target: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    check_lengths(predicted.len(), target.len(), mask.len())?;
    Ok(predicted
        .iter()
        .zip(target)
        .zip(mask)
        .map(|((p, t), &m)| if m { 2.0 * (p - t) } else { 0.0 })
        .collect())
}

/// Trained gap regressor bound to an ordered seed list.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectorModel {
    net: ConvRegressor,
    seed_ids: Vec<String>,
    config: TrainConfig,
}

#[derive(Debug, Serialize, Deserialize)]
struct SelectorManifest {
    tag: String,
    input_size: (usize, usize),
    architecture: String,
    arch: RegressorArch,
    rng_seed: u64,
    training: TrainConfig,
    seed_ids: Vec<String>,
}

impl SelectorModel {
    pub fn seed_ids(&self) -> &[String] {
        &self.seed_ids
    }

    pub fn output_dim(&self) -> usize {
        self.seed_ids.len()
    }

    pub fn input_size(&self) -> (usize, usize) {
        self.net.arch().input_size
    }

    pub fn params(&self) -> &[f64] {
        self.net.params()
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn predict(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        self.net.predict(image)
    }

    pub fn rank(&self, image: &ImageTensor) -> Result<SeedRanking> {
        rank_seeds(&self.predict(image)?, &self.seed_ids)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let manifest = SelectorManifest {
            tag: "selector".into(),
            input_size: self.net.arch().input_size,
            architecture: self.net.arch().describe(),
            arch: self.net.arch().clone(),
            rng_seed: self.config.rng_seed,
            training: self.config.clone(),
            seed_ids: self.seed_ids.clone(),
        };
        checkpoint::save(path, self.net.params(), &manifest)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (params, manifest): (_, SelectorManifest) = checkpoint::load(path)?;
        if manifest.seed_ids.len() != manifest.arch.output_dim {
            return Err(Error::Checkpoint(format!(
                "checkpoint binds {} seeds to {} outputs",
                manifest.seed_ids.len(),
                manifest.arch.output_dim
            )));
        }
        Ok(Self {
            net: ConvRegressor::from_params(manifest.arch, params)?,
            seed_ids: manifest.seed_ids,
            config: manifest.training,
        })
    }
}

/// Per-seed gap predictions for `image`, in the model's seed order.
pub fn predict_gaps(model: &SelectorModel, image: &ImageTensor) -> Result<Vec<f64>> {
    model.predict(image)
}

/// Diagnostics from [`train_selector_with_report`].
#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    /// `(step, validation loss)` at every evaluation.
    pub validation: Vec<(usize, f64)>,
    /// Step whose parameters were kept.
    pub best_step: usize,
    pub best_validation: Option<f64>,
    pub steps_run: usize,
}

struct Rows {
    inputs: Vec<Tensor3>,
    targets: Vec<Vec<f64>>,
    masks: Vec<Vec<bool>>,
}

fn gather_rows(net: &ConvRegressor, gaps: &GapMatrix, images: &ImageSet) -> Result<Rows> {
    let mut rows = Rows {
        inputs: Vec::new(),
        targets: Vec::new(),
        masks: Vec::new(),
    };
    for (g, id) in gaps.image_ids().iter().enumerate() {
        let image = images.require(id)?;
        let (target, mask) = gaps.row_targets(g);
        if !mask.iter().any(|m| *m) {
            continue;
        }
        rows.inputs.push(net.prepare(image)?);
        rows.targets.push(target);
        rows.masks.push(mask);
    }
    Ok(rows)
}

/// Mean squared error over observed entries.
fn observed_mse(net: &ConvRegressor, rows: &Rows) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for ((x, t), m) in rows.inputs.iter().zip(&rows.targets).zip(&rows.masks) {
        let cache = net.forward(x.clone());
        total += masked_loss(cache.output(), t, m).expect("row shapes agree");
        count += m.iter().filter(|b| **b).count();
    }
    total / count.max(1) as f64
}

/// Fits the selector by momentum SGD on the summed masked loss.
pub fn train_selector(
    gaps: &GapMatrix,
    validation: Option<&GapMatrix>,
    images: &ImageSet,
    config: &TrainConfig,
) -> Result<SelectorModel> {
    Ok(train_selector_with_report(gaps, validation, images, config)?.0)
}

/// As [`train_selector`], also returning validation diagnostics.
///
/// Rows without observations are skipped. The output biases start at the
/// per-seed mean observed gap. With a validation matrix the parameters with
/// the lowest validation loss are kept and training stops after
/// `config.patience` evaluations without improvement.
pub fn train_selector_with_report(
    gaps: &GapMatrix,
    validation: Option<&GapMatrix>,
    images: &ImageSet,
    config: &TrainConfig,
) -> Result<(SelectorModel, TrainReport)> {
    config.validate()?;
    if gaps.observed_count() == 0 {
        return Err(Error::arg("gap matrix has no observed entries"));
    }
    if let Some(val) = validation {
        if val.seed_ids() != gaps.seed_ids() {
            return Err(Error::arg("validation gaps use a different seed order"));
        }
    }
    let arch = RegressorArch {
        backbone: config.backbone,
        input_size: config.input_size,
        output_dim: gaps.cols(),
        head: Head::Linear,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut net = ConvRegressor::new(arch, &mut rng)?;
    let (means, _) = column_means(gaps);
    net.set_output_bias(&means.iter().map(|m| m.unwrap_or(0.0)).collect::<Vec<_>>());

    let train = gather_rows(&net, gaps, images)?;
    let val = validation
        .map(|v| gather_rows(&net, v, images))
        .transpose()?
        .filter(|rows| !rows.inputs.is_empty());

    let mut report = TrainReport::default();
    let mut best_params = net.params().to_vec();
    let mut best_val = val.as_ref().map(|rows| observed_mse(&net, rows));
    if let Some(v) = best_val {
        report.validation.push((0, v));
        report.best_validation = Some(v);
    }
    let mut stale = 0usize;

    let mut opt = MomentumSgd::new(net.params().len(), config.learning_rate, config.momentum);
    let mut sampler = BatchSampler::new(train.inputs.len(), config.rng_seed.wrapping_add(1));
    let mut grads = vec![0.0; net.params().len()];
    for step in 1..=config.iterations {
        grads.fill(0.0);
        let batch = sampler.next_batch(config.batch_size);
        let scale = 1.0 / batch.len() as f64;
        for &i in batch {
            let cache = net.forward(train.inputs[i].clone());
            let mut d = masked_loss_grad(cache.output(), &train.targets[i], &train.masks[i])?;
            d.iter_mut().for_each(|v| *v *= scale);
            net.backward(&cache, &d, &mut grads);
        }
        opt.step(net.params_mut(), &grads);
        report.steps_run = step;

        if let Some(rows) = &val {
            if step % config.eval_every == 0 || step == config.iterations {
                let v = observed_mse(&net, rows);
                report.validation.push((step, v));
                if best_val.is_none_or(|b| v < b) {
                    best_val = Some(v);
                    best_params.copy_from_slice(net.params());
                    report.best_step = step;
                    stale = 0;
                } else {
                    stale += 1;
                    if config.patience.is_some_and(|p| stale >= p) {
                        log::info!("early stop at step {step}, best step {}", report.best_step);
                        break;
                    }
                }
            }
        }
    }
    if val.is_some() {
        net.params_mut().copy_from_slice(&best_params);
        report.best_validation = best_val;
    } else {
        report.best_step = report.steps_run;
    }
    Ok((
        SelectorModel {
            net,
            seed_ids: gaps.seed_ids().to_vec(),
            config: config.clone(),
        },
        report,
    ))
}

/// Mean squared error over observed entries of `gaps` for a trained model.
pub fn validation_loss(model: &SelectorModel, gaps: &GapMatrix, images: &ImageSet) -> Result<f64> {
    let rows = gather_rows(&model.net, gaps, images)?;
    Ok(observed_mse(&model.net, &rows))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedSeed {
    pub seed_id: String,
    pub predicted_gap: f64,
}

/// Seeds by predicted gap, best first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRanking {
    pub entries: Vec<RankedSeed>,
    /// Set when no seed is predicted to increase memorability.
    pub keep_original: bool,
}

impl SeedRanking {
    /// First `q` entries; `keep_original` still reflects the whole ranking.
    pub fn top(&self, q: usize) -> SeedRanking {
        SeedRanking {
            entries: self.entries.iter().take(q).cloned().collect(),
            keep_original: self.keep_original,
        }
    }

    pub fn seed_ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.seed_id.as_str()).collect()
    }
}

/// Index order of `values` descending, ties by index ascending.
pub fn descending_order(values: &[f64]) -> Vec<usize> {
    crate::image::order_by_score_desc(values)
}

pub fn rank_seeds(predicted: &[f64], seed_ids: &[String]) -> Result<SeedRanking> {
    if predicted.len() != seed_ids.len() {
        return Err(Error::arg(format!(
            "{} predictions for {} seeds",
            predicted.len(),
            seed_ids.len()
        )));
    }
    let entries = descending_order(predicted)
        .into_iter()
        .map(|i| RankedSeed {
            seed_id: seed_ids[i].clone(),
            predicted_gap: predicted[i],
        })
        .collect();
    Ok(SeedRanking {
        entries,
        keep_original: predicted.iter().all(|&g| g <= 0.0),
    })
}

/// Image-independent mean gap per seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineVector {
    pub mean_gaps: Vec<f64>,
    pub seed_ids: Vec<String>,
}

fn column_means(gaps: &GapMatrix) -> (Vec<Option<f64>>, Vec<usize>) {
    let mut sums = vec![0.0; gaps.cols()];
    let mut counts = vec![0usize; gaps.cols()];
    for g in 0..gaps.rows() {
        for s in 0..gaps.cols() {
            if let Some(v) = gaps.get(g, s) {
                sums[s] += v;
                counts[s] += 1;
            }
        }
    }
    let means = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| (c > 0).then(|| s / c as f64))
        .collect();
    (means, counts)
}

/// Mean of the observed gaps in each column.
pub fn baseline_vector(gaps: &GapMatrix) -> Result<BaselineVector> {
    let (means, _) = column_means(gaps);
    let mean_gaps = means
        .iter()
        .enumerate()
        .map(|(s, m)| m.ok_or_else(|| Error::arg(format!("seed {} has no observed gaps", gaps.seed_ids()[s]))))
        .collect::<Result<Vec<_>>>()?;
    Ok(BaselineVector {
        mean_gaps,
        seed_ids: gaps.seed_ids().to_vec(),
    })
}

impl BaselineVector {
    /// Like [`baseline_vector`] but fills unobserved columns with `fill`;
    /// returns the ids of the filled seeds.
    pub fn with_fill(gaps: &GapMatrix, fill: f64) -> (BaselineVector, Vec<String>) {
        let (means, _) = column_means(gaps);
        let mut filled = Vec::new();
        let mean_gaps = means
            .iter()
            .enumerate()
            .map(|(s, m)| {
                m.unwrap_or_else(|| {
                    filled.push(gaps.seed_ids()[s].clone());
                    fill
                })
            })
            .collect();
        (
            BaselineVector {
                mean_gaps,
                seed_ids: gaps.seed_ids().to_vec(),
            },
            filled,
        )
    }

    pub fn ranking(&self) -> SeedRanking {
        rank_seeds(&self.mean_gaps, &self.seed_ids).expect("baseline lengths agree")
    }
}

/// The baseline's prediction, identical for every image.
pub fn baseline_predict(baseline: &BaselineVector) -> Vec<f64> {
    baseline.mean_gaps.clone()
}
