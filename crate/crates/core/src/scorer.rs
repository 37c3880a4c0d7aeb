//! Memorability scorers: trained CNN regressors and analytic oracles.
//!
//! Two trained scorers play distinct roles: the internal model (tag `M`)
//! labels gap data for selector training, the external model (tag `E`),
//! trained on a disjoint half of the data, is used only for evaluation.

use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::nn::{ConvRegressor, Head, MomentumSgd, RegressorArch, Tensor3};
use crate::train::{BatchSampler, TrainConfig};

pub const TAG_INTERNAL: &str = "M";
pub const TAG_EXTERNAL: &str = "E";

/// Deterministic closed-form scorers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Oracle {
    /// Mean Rec. 601 luma.
    Brightness,
    /// Mean per-pixel standard deviation across the RGB channels, divided by
    /// its maximum attainable value `sqrt(2)/3`.
    Colorfulness,
}

const MAX_CHANNEL_STD: f64 = std::f64::consts::SQRT_2 / 3.0;

impl Oracle {
    pub fn name(self) -> &'static str {
        match self {
            Oracle::Brightness => "brightness",
            Oracle::Colorfulness => "colorfulness",
        }
    }

    pub fn score(self, img: &ImageTensor) -> f64 {
        match self {
            Oracle::Brightness => img.mean_luma(),
            Oracle::Colorfulness => {
                let [r, g, b] = [img.channel(0), img.channel(1), img.channel(2)];
                let total: f64 = r
                    .iter()
                    .zip(g)
                    .zip(b)
                    .map(|((r, g), b)| {
                        let mean = (r + g + b) / 3.0;
                        (((r - mean).powi(2) + (g - mean).powi(2) + (b - mean).powi(2)) / 3.0).sqrt()
                    })
                    .sum();
                let n = (img.height() * img.width()) as f64;
                (total / n / MAX_CHANNEL_STD).clamp(0.0, 1.0)
            }
        }
    }
}

impl FromStr for Oracle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "brightness" => Ok(Oracle::Brightness),
            "colorfulness" => Ok(Oracle::Colorfulness),
            other => Err(Error::arg(format!("unknown oracle scorer {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Kind {
    Trained {
        net: ConvRegressor,
        config: TrainConfig,
    },
    Oracle(Oracle),
}

/// A memorability predictor with outputs in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScorerModel {
    kind: Kind,
    tag: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScorerManifest {
    tag: String,
    input_size: (usize, usize),
    architecture: String,
    arch: RegressorArch,
    rng_seed: u64,
    training: TrainConfig,
}

impl ScorerModel {
    pub fn oracle(oracle: Oracle) -> Self {
        Self {
            kind: Kind::Oracle(oracle),
            tag: oracle.name().to_string(),
        }
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = tag.into();
        self
    }

    /// Network input size; `None` for oracles, which score at native size.
    pub fn input_size(&self) -> Option<(usize, usize)> {
        match &self.kind {
            Kind::Trained { net, .. } => Some(net.arch().input_size),
            Kind::Oracle(_) => None,
        }
    }

    pub fn params(&self) -> Option<&[f64]> {
        match &self.kind {
            Kind::Trained { net, .. } => Some(net.params()),
            Kind::Oracle(_) => None,
        }
    }

    pub fn predict(&self, img: &ImageTensor) -> Result<f64> {
        let score = match &self.kind {
            Kind::Trained { net, .. } => net.predict(img)?[0],
            Kind::Oracle(o) => o.score(img),
        };
        Ok(score.clamp(0.0, 1.0))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let Kind::Trained { net, config } = &self.kind else {
            return Err(Error::arg("oracle scorers have no checkpoint"));
        };
        let manifest = ScorerManifest {
            tag: self.tag.clone(),
            input_size: net.arch().input_size,
            architecture: net.arch().describe(),
            arch: net.arch().clone(),
            rng_seed: config.rng_seed,
            training: config.clone(),
        };
        checkpoint::save(path, net.params(), &manifest)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (params, manifest): (_, ScorerManifest) = checkpoint::load(path)?;
        Ok(Self {
            kind: Kind::Trained {
                net: ConvRegressor::from_params(manifest.arch, params)?,
                config: manifest.training,
            },
            tag: manifest.tag,
        })
    }

    /// `oracle:<name>` or a checkpoint path.
    pub fn from_spec(spec: &str) -> Result<Self> {
        match spec.strip_prefix("oracle:") {
            Some(name) => Ok(Self::oracle(name.parse()?)),
            None => Self::load(spec),
        }
    }
}

/// Memorability of `image` under `model`, in `[0, 1]`.
pub fn predict_score(model: &ScorerModel, image: &ImageTensor) -> Result<f64> {
    model.predict(image)
}

/// Images paired with memorability labels in `[0, 1]`.
#[derive(Clone, Debug, Default)]
pub struct ScoredDataset {
    items: Vec<(ImageTensor, f64)>,
}

impl ScoredDataset {
    pub fn new(items: Vec<(ImageTensor, f64)>) -> Result<Self> {
        if let Some((_, bad)) = items.iter().find(|(_, m)| !(0.0..=1.0).contains(m)) {
            return Err(Error::arg(format!("label {bad} outside [0, 1]")));
        }
        Ok(Self { items })
    }

    pub fn items(&self) -> &[(ImageTensor, f64)] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Shuffles indices with `rng_seed` and cuts two equal disjoint halves;
    /// an odd trailing item is left out.
    pub fn split_halves(&self, rng_seed: u64) -> Result<(ScoredDataset, ScoredDataset)> {
        let idx = split_indices(self.items.len(), rng_seed)?;
        let pick = |ids: &[usize]| ScoredDataset {
            items: ids.iter().map(|&i| self.items[i].clone()).collect(),
        };
        Ok((pick(&idx.0), pick(&idx.1)))
    }
}

/// Index form of [`ScoredDataset::split_halves`].
pub fn split_indices(n: usize, rng_seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::arg("need at least two items to split"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
    let half = n / 2;
    Ok((order[..half].to_vec(), order[half..2 * half].to_vec()))
}

fn mean_squared_error(net: &ConvRegressor, inputs: &[Tensor3], labels: &[f64]) -> f64 {
    inputs
        .iter()
        .zip(labels)
        .map(|(x, t)| (net.forward(x.clone()).output()[0] - t).powi(2))
        .sum::<f64>()
        / inputs.len() as f64
}

/// Fits a sigmoid-headed CNN to the labels by momentum SGD on squared error.
///
/// If training ends with a higher training error than at initialization the
/// initial parameters are returned.
pub fn train_scorer(data: &ScoredDataset, config: &TrainConfig) -> Result<ScorerModel> {
    if data.is_empty() {
        return Err(Error::arg("cannot train a scorer on an empty dataset"));
    }
    config.validate()?;
    let arch = RegressorArch {
        backbone: config.backbone,
        input_size: config.input_size,
        output_dim: 1,
        head: Head::Sigmoid,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut net = ConvRegressor::new(arch, &mut rng)?;
    let inputs = data
        .items
        .iter()
        .map(|(img, _)| net.prepare(img))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<f64> = data.items.iter().map(|(_, m)| *m).collect();

    let initial_params = net.params().to_vec();
    let initial_mse = mean_squared_error(&net, &inputs, &labels);
    let mut opt = MomentumSgd::new(initial_params.len(), config.learning_rate, config.momentum);
    let mut sampler = BatchSampler::new(inputs.len(), config.rng_seed.wrapping_add(1));
    let mut grads = vec![0.0; initial_params.len()];
    for step in 0..config.iterations {
        grads.fill(0.0);
        let batch = sampler.next_batch(config.batch_size);
        let scale = 2.0 / batch.len() as f64;
        for &i in batch {
            let cache = net.forward(inputs[i].clone());
            let d = scale * (cache.output()[0] - labels[i]);
            net.backward(&cache, &[d], &mut grads);
        }
        opt.step(net.params_mut(), &grads);
        if step % 200 == 0 {
            log::debug!("scorer step {step}");
        }
    }
    let final_mse = mean_squared_error(&net, &inputs, &labels);
    log::info!("scorer training mse {initial_mse:.6} -> {final_mse:.6}");
    if !(final_mse <= initial_mse) {
        *net.params_mut() = initial_params;
    }
    Ok(ScorerModel {
        kind: Kind::Trained {
            net,
            config: config.clone(),
        },
        tag: TAG_INTERNAL.to_string(),
    })
}

/// Trains the internal and external scorers on disjoint halves of `data`.
pub fn train_internal_external(
    data: &ScoredDataset,
    config: &TrainConfig,
    split_seed: u64,
) -> Result<(ScorerModel, ScorerModel)> {
    let (m_half, e_half) = data.split_halves(split_seed)?;
    let internal = train_scorer(&m_half, config)?.with_tag(TAG_INTERNAL);
    let mut e_config = config.clone();
    e_config.rng_seed = config.rng_seed.wrapping_add(0x9e37_79b9);
    let external = train_scorer(&e_half, &e_config)?.with_tag(TAG_EXTERNAL);
    Ok((internal, external))
}

/// Ranks with ties assigned the mean of the positions they span (1-based).
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson correlation of average ranks).
///
/// Returns 0 when either side is constant.
pub fn rank_correlation(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::arg(format!(
            "length mismatch: {} predictions vs {} labels",
            predicted.len(),
            actual.len()
        )));
    }
    if predicted.len() < 2 {
        return Err(Error::arg("rank correlation needs at least two points"));
    }
    if predicted.iter().chain(actual).any(|v| !v.is_finite()) {
        return Err(Error::arg("rank correlation inputs must be finite"));
    }
    let (rp, ra) = (average_ranks(predicted), average_ranks(actual));
    let n = rp.len() as f64;
    let (mp, ma) = (rp.iter().sum::<f64>() / n, ra.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut vp = 0.0;
    let mut va = 0.0;
    for (p, a) in rp.iter().zip(&ra) {
        cov += (p - mp) * (a - ma);
        vp += (p - mp).powi(2);
        va += (a - ma).powi(2);
    }
    if vp == 0.0 || va == 0.0 {
        return Ok(0.0);
    }
    Ok((cov / (vp * va).sqrt()).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brightness_extremes() {
        let s = ScorerModel::oracle(Oracle::Brightness);
        assert!((s.predict(&ImageTensor::gray(4, 4, 1.0).unwrap()).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(s.predict(&ImageTensor::gray(4, 4, 0.0).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn colorfulness_range() {
        let s = ScorerModel::oracle(Oracle::Colorfulness);
        assert_eq!(s.predict(&ImageTensor::gray(2, 2, 0.3).unwrap()).unwrap(), 0.0);
        let saturated = ImageTensor::filled(2, 2, [1.0, 0.0, 0.0]).unwrap();
        assert!((s.predict(&saturated).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_examples() {
        assert!((rank_correlation(&[0.1, 0.2, 0.3], &[0.1, 0.2, 0.3]).unwrap() - 1.0).abs() < 1e-12);
        assert!((rank_correlation(&[0.3, 0.2, 0.1], &[0.1, 0.2, 0.3]).unwrap() + 1.0).abs() < 1e-12);
        let rho = rank_correlation(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 1.0, 4.0, 3.0, 5.0]).unwrap();
        assert!((rho - 0.8).abs() < 1e-12);
    }

    #[test]
    fn spearman_errors() {
        assert!(rank_correlation(&[1.0], &[1.0]).is_err());
        assert!(rank_correlation(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn ties_get_average_ranks() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn spearman_with_ties_matches_pearson_on_ranks() {
        // Hand-computed: ranks p = [1, 2.5, 2.5, 4], a = [1, 2, 3, 4].
        let rho = rank_correlation(&[1.0, 2.0, 2.0, 5.0], &[10.0, 20.0, 30.0, 40.0]).unwrap();
        let expected = 4.5 / (4.5f64 * 5.0).sqrt();
        assert!((rho - expected).abs() < 1e-12);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        assert!(matches!(
            train_scorer(&ScoredDataset::default(), &TrainConfig::scorer()),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn labels_are_validated() {
        let img = ImageTensor::gray(2, 2, 0.5).unwrap();
        assert!(ScoredDataset::new(vec![(img, 1.5)]).is_err());
    }

    #[test]
    fn halves_are_disjoint_and_equal() {
        let (a, b) = split_indices(11, 4).unwrap();
        assert_eq!(a.len(), 5);
        assert_eq!(b.len(), 5);
        assert!(a.iter().all(|i| !b.contains(i)));
        assert_eq!(split_indices(11, 4).unwrap(), (a, b));
    }

    #[test]
    fn oracle_spec_parses() {
        assert_eq!(ScorerModel::from_spec("oracle:brightness").unwrap().tag(), "brightness");
        assert!(ScorerModel::from_spec("oracle:loudness").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn spearman_ignores_monotone_transforms(
                pairs in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 2..30)
            ) {
                let (p, a): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
                let base = rank_correlation(&p, &a).unwrap();
                let p2: Vec<f64> = p.iter().map(|v| v.exp() * 3.0 + 1.0).collect();
                let a2: Vec<f64> = a.iter().map(|v| v.powi(3) - 2.0).collect();
                prop_assert!((rank_correlation(&p2, &a2).unwrap() - base).abs() < 1e-9);
                prop_assert!((-1.0..=1.0).contains(&base));
            }
        }
    }
}
