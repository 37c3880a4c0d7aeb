//! Sweep runner over observation rate, style weight, seed-set size and
//! backbone, producing results-table records for the selector and the
//! mean-gap baseline under both scorers.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gapgen::{build_gap_dataset, compute_gap, sample_mask, BuildOptions, GapMatrix, GapMeta, Mask};
use crate::image::{order_by_score_desc, ImageSet, SeedCatalog};
use crate::metrics::{accuracy_metric, mse_metric, topn_curve, EvalReport, TopNCurve, METHOD_BASELINE, METHOD_SCUBE};
use crate::nn::Backbone;
use crate::scorer::{ScorerModel, TAG_EXTERNAL, TAG_INTERNAL};
use crate::selector::{baseline_predict, rank_seeds, train_selector, BaselineVector, SeedRanking};
use crate::synth::Synthesizer;
use crate::train::TrainConfig;

/// Gap data for one style weight.
///
/// Training and validation gaps are fully observed and scored with the
/// internal predictor; observation masks are applied per sweep point. Test
/// gaps are computed once from a single synthesis of every test pair,
/// scored by both predictors.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub alpha: f64,
    pub train: GapMatrix,
    pub validation: Option<GapMatrix>,
    pub test_internal: GapMatrix,
    pub test_external: GapMatrix,
    pub images: ImageSet,
    pub catalog: SeedCatalog,
}

/// Image splits and scorers from which [`prepare`] builds gap data.
pub struct PrepareInputs<'a> {
    pub train: &'a ImageSet,
    pub validation: Option<&'a ImageSet>,
    pub test: &'a ImageSet,
    pub catalog: &'a SeedCatalog,
    pub internal: &'a ScorerModel,
    pub external: &'a ScorerModel,
    pub synthesizer: &'a dyn Synthesizer,
    pub workers: usize,
}

fn merged(sets: &[&ImageSet]) -> Result<ImageSet> {
    let mut all = ImageSet::default();
    for set in sets {
        for (id, img) in set.iter() {
            all.insert(id.to_string(), img.clone())?;
        }
    }
    Ok(all)
}

fn full_gaps(images: &ImageSet, inputs: &PrepareInputs<'_>, alpha: f64) -> Result<GapMatrix> {
    let synth = |img: &_, seed: &_| inputs.synthesizer.synthesize(img, seed, alpha);
    build_gap_dataset(
        images,
        inputs.catalog,
        inputs.internal,
        &synth,
        &Mask::full(images.len(), inputs.catalog.len()),
        GapMeta::new(1.0, 0, inputs.internal.tag(), alpha),
        &BuildOptions {
            workers: inputs.workers,
            checkpoint: None,
        },
    )
}

/// Synthesizes every (test image, seed) pair once and scores it with both predictors.
fn test_gaps(inputs: &PrepareInputs<'_>, alpha: f64) -> Result<(GapMatrix, GapMatrix)> {
    let seeds = inputs.catalog.seeds();
    let row = |img| -> Result<Vec<(f64, f64)>> {
        seeds
            .iter()
            .map(|seed| {
                let out = inputs.synthesizer.synthesize(img, seed, alpha)?;
                Ok((compute_gap(img, &out, inputs.internal)?, compute_gap(img, &out, inputs.external)?))
            })
            .collect()
    };
    let rows: Vec<Vec<(f64, f64)>> = if inputs.workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(inputs.workers)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| inputs.test.images().par_iter().map(row).collect::<Result<_>>())?
    } else {
        inputs.test.images().iter().map(row).collect::<Result<_>>()?
    };
    let split = |pick: fn(&(f64, f64)) -> f64| -> Vec<Vec<f64>> {
        rows.iter().map(|r| r.iter().map(pick).collect()).collect()
    };
    let ids = inputs.test.ids().to_vec();
    let seed_ids = inputs.catalog.seed_ids();
    Ok((
        GapMatrix::from_rows(ids.clone(), seed_ids.clone(), &split(|p| p.0), GapMeta::new(1.0, 0, inputs.internal.tag(), alpha))?,
        GapMatrix::from_rows(ids, seed_ids, &split(|p| p.1), GapMeta::new(1.0, 0, inputs.external.tag(), alpha))?,
    ))
}

/// Builds the gap data for one style weight.
pub fn prepare(inputs: &PrepareInputs<'_>, alpha: f64) -> Result<PreparedData> {
    let train = full_gaps(inputs.train, inputs, alpha)?;
    let validation = inputs.validation.map(|v| full_gaps(v, inputs, alpha)).transpose()?;
    let (test_internal, test_external) = test_gaps(inputs, alpha)?;
    let mut splits = vec![inputs.train, inputs.test];
    splits.extend(inputs.validation);
    Ok(PreparedData {
        alpha,
        train,
        validation,
        test_internal,
        test_external,
        images: merged(&splits)?,
        catalog: inputs.catalog.clone(),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepSpec {
    pub alphas: Vec<f64>,
    pub omega_bars: Vec<f64>,
    /// Seed-set sizes; each subset takes half its seeds from the most and
    /// half from the least memorable half of the catalog.
    pub seed_counts: Vec<usize>,
    pub backbones: Vec<Backbone>,
    pub train: TrainConfig,
    /// Independent mask and initialization draws averaged per sweep point.
    pub repeats: usize,
    pub rng_seed: u64,
    /// N values for top-N curves; each is capped at the seed-set size.
    pub top_n: Vec<usize>,
    /// Value used by the baseline for seeds with no observed gaps.
    pub baseline_fill: f64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            alphas: vec![2.0],
            omega_bars: vec![1.0],
            seed_counts: vec![],
            backbones: vec![Backbone::Small],
            train: TrainConfig::selector(),
            repeats: 1,
            rng_seed: 0,
            top_n: vec![1, 3, 10],
            baseline_fill: 0.0,
        }
    }
}

fn alpha_key(alpha: f64) -> String {
    format!("{alpha}")
}

/// Prepared data keyed by style weight.
#[derive(Clone, Debug, Default)]
pub struct PreparedSet {
    by_alpha: BTreeMap<String, PreparedData>,
}

impl PreparedSet {
    pub fn insert(&mut self, data: PreparedData) {
        self.by_alpha.insert(alpha_key(data.alpha), data);
    }

    pub fn get(&self, alpha: f64) -> Option<&PreparedData> {
        self.by_alpha.get(&alpha_key(alpha))
    }
}

impl FromIterator<PreparedData> for PreparedSet {
    fn from_iter<T: IntoIterator<Item = PreparedData>>(iter: T) -> Self {
        let mut set = Self::default();
        iter.into_iter().for_each(|d| set.insert(d));
        set
    }
}

impl SweepSpec {
    /// Checks every sweep point against the prepared data.
    pub fn validate(&self, prepared: &PreparedSet) -> Result<()> {
        self.train.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if let Some(w) = self.omega_bars.iter().find(|w| !(**w > 0.0 && **w <= 1.0)) {
            return Err(Error::Config(format!("observation rate {w} outside (0, 1]")));
        }
        if self.top_n.contains(&0) {
            return Err(Error::Config("top-N values must be positive".into()));
        }
        for &alpha in &self.alphas {
            let data = prepared
                .get(alpha)
                .ok_or_else(|| Error::Config(format!("no prepared gap data for alpha {alpha}")))?;
            let available = data.catalog.len();
            for &s in self.seed_counts(available).iter() {
                if s == 0 || s > available {
                    return Err(Error::Config(format!(
                        "seed-set size {s} not available for alpha {alpha} ({available} seeds)"
                    )));
                }
            }
            for gaps in [&data.train, &data.test_internal, &data.test_external] {
                if gaps.seed_ids() != data.catalog.seed_ids().as_slice() {
                    return Err(Error::Config(format!("gap data for alpha {alpha} uses a different seed order")));
                }
            }
        }
        Ok(())
    }

    fn seed_counts(&self, available: usize) -> Vec<usize> {
        if self.seed_counts.is_empty() {
            vec![available]
        } else {
            self.seed_counts.clone()
        }
    }
}

/// `count` seed ids sampled half from the most and half from the least
/// memorable half of `catalog`; odd counts take the extra seed from the
/// most memorable half. Returned in catalog order.
pub fn sample_seed_subset(catalog: &SeedCatalog, count: usize, rng_seed: u64) -> Result<Vec<String>> {
    let n = catalog.len();
    if count == 0 || count > n {
        return Err(Error::arg(format!("cannot sample {count} of {n} seeds")));
    }
    if count == n {
        return Ok(catalog.seed_ids());
    }
    let scores: Vec<f64> = catalog.seeds().iter().map(|s| s.memorability).collect();
    let order = order_by_score_desc(&scores);
    let (most, least) = order.split_at(n.div_ceil(2));
    let want_most = count.div_ceil(2).min(most.len());
    let want_least = count - want_most;
    if want_least > least.len() {
        return Err(Error::arg(format!("cannot sample {count} of {n} seeds evenly")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut picked: Vec<usize> = most.choose_multiple(&mut rng, want_most).copied().collect();
    picked.extend(least.choose_multiple(&mut rng, want_least).copied());
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| catalog.seeds()[i].seed_id.clone()).collect())
}

/// Top-N curve for one sweep point, method and scorer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub alpha: f64,
    pub omega_bar: f64,
    pub backbone: String,
    pub method_tag: String,
    pub scorer_tag: String,
    pub curve: TopNCurve,
}

#[derive(Clone, Debug, Default)]
pub struct ExperimentOutput {
    pub reports: Vec<EvalReport>,
    pub curves: Vec<CurveRecord>,
}

struct PointResult {
    /// `(method, scorer) -> (accuracy, mse, curve)`
    cells: Vec<(&'static str, &'static str, f64, f64, TopNCurve)>,
}

fn evaluate_point(
    data: &PreparedData,
    seed_ids: &[String],
    omega_bar: f64,
    backbone: Backbone,
    spec: &SweepSpec,
    draw: u64,
) -> Result<PointResult> {
    let train_full = data.train.select_seeds(seed_ids)?;
    let mask = sample_mask(train_full.rows(), train_full.cols(), omega_bar, draw)?;
    let mut train = train_full.masked(&mask)?;
    train.meta_mut().omega_target = omega_bar;
    train.meta_mut().rng_seed = draw;
    let validation = data.validation.as_ref().map(|v| v.select_seeds(seed_ids)).transpose()?;

    let config = TrainConfig {
        backbone,
        rng_seed: spec.train.rng_seed.wrapping_add(draw),
        ..spec.train.clone()
    };
    let model = train_selector(&train, validation.as_ref(), &data.images, &config)?;
    let (baseline, filled) = BaselineVector::with_fill(&train, spec.baseline_fill);
    if !filled.is_empty() {
        log::warn!("baseline filled {} unobserved seeds with {}", filled.len(), spec.baseline_fill);
    }
    let baseline_row = baseline_predict(&baseline);

    let test_ids = data.test_internal.image_ids();
    let mut scube_rows = Vec::with_capacity(test_ids.len());
    for id in test_ids {
        scube_rows.push(model.predict(data.images.require(id)?)?);
    }
    let baseline_rows = vec![baseline_row; test_ids.len()];
    let n_values: Vec<usize> = {
        let mut v: Vec<usize> = spec.top_n.iter().map(|&n| n.min(seed_ids.len())).collect();
        v.dedup();
        v
    };

    let mut cells = Vec::new();
    for (scorer, truth) in [(TAG_INTERNAL, &data.test_internal), (TAG_EXTERNAL, &data.test_external)] {
        let truth = truth.select_seeds(seed_ids)?.dense_rows()?;
        for (method, rows) in [(METHOD_SCUBE, &scube_rows), (METHOD_BASELINE, &baseline_rows)] {
            let rankings = rows
                .iter()
                .map(|r| rank_seeds(r, seed_ids))
                .collect::<Result<Vec<SeedRanking>>>()?;
            cells.push((
                method,
                scorer,
                accuracy_metric(&truth, rows)?,
                mse_metric(&truth, rows)?,
                topn_curve(&rankings, &truth, seed_ids, &n_values)?,
            ));
        }
    }
    Ok(PointResult { cells })
}

/// Runs every sweep point, averaging over `spec.repeats` draws, and appends
/// the reports to `results` as JSON lines when given.
pub fn run_experiment(spec: &SweepSpec, prepared: &PreparedSet, results: Option<&Path>) -> Result<ExperimentOutput> {
    spec.validate(prepared)?;
    let mut out = ExperimentOutput::default();
    let mut draw_counter = 0u64;
    for &alpha in &spec.alphas {
        let data = prepared.get(alpha).expect("validated");
        for s in spec.seed_counts(data.catalog.len()) {
            let seed_ids = sample_seed_subset(&data.catalog, s, spec.rng_seed)?;
            for &backbone in &spec.backbones {
                for &omega_bar in &spec.omega_bars {
                    let mut sums: Vec<(&str, &str, f64, f64, TopNCurve)> = Vec::new();
                    for r in 0..spec.repeats {
                        draw_counter += 1;
                        let draw = spec.rng_seed.wrapping_mul(1_000_003).wrapping_add(r as u64);
                        log::info!("alpha {alpha} S {s} {backbone} omega {omega_bar} repeat {r} (#{draw_counter})");
                        let point = evaluate_point(data, &seed_ids, omega_bar, backbone, spec, draw)?;
                        if sums.is_empty() {
                            sums = point.cells;
                        } else {
                            for (acc, cell) in sums.iter_mut().zip(point.cells) {
                                acc.2 += cell.2;
                                acc.3 += cell.3;
                                acc.4.mean_gaps.iter_mut().zip(&cell.4.mean_gaps).for_each(|(a, b)| *a += b);
                            }
                        }
                    }
                    let k = spec.repeats as f64;
                    for (method, scorer, acc, mse, mut curve) in sums {
                        curve.mean_gaps.iter_mut().for_each(|g| *g /= k);
                        out.reports.push(EvalReport {
                            accuracy: acc / k,
                            mse: mse / k,
                            scorer_tag: scorer.to_string(),
                            method_tag: method.to_string(),
                            alpha,
                            omega_bar,
                            seeds: s,
                            backbone: backbone.to_string(),
                        });
                        out.curves.push(CurveRecord {
                            alpha,
                            omega_bar,
                            backbone: backbone.to_string(),
                            method_tag: method.to_string(),
                            scorer_tag: scorer.to_string(),
                            curve,
                        });
                    }
                }
            }
        }
    }
    if let Some(path) = results {
        append_reports(path, &out.reports)?;
    }
    Ok(out)
}

/// Appends one JSON record per report.
pub fn append_reports(path: impl AsRef<Path>, reports: &[EvalReport]) -> Result<()> {
    let path: PathBuf = path.as_ref().into();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
    for r in reports {
        writeln!(file, "{}", serde_json::to_string(r)?)?;
    }
    Ok(())
}

pub fn read_reports(path: impl AsRef<Path>) -> Result<Vec<EvalReport>> {
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::brightness_seeds;

    #[test]
    fn subset_splits_between_halves() {
        let catalog = brightness_seeds(&[0.4, 0.3, 0.2, 0.1, -0.1, -0.2, -0.3, -0.4], (2, 2)).unwrap();
        for seed in 0..10 {
            let ids = sample_seed_subset(&catalog, 4, seed).unwrap();
            assert_eq!(ids.len(), 4);
            let top = ids.iter().filter(|id| catalog.index_of(id).unwrap() < 4).count();
            assert_eq!(top, 2, "{ids:?}");
        }
        assert_eq!(sample_seed_subset(&catalog, 8, 0).unwrap(), catalog.seed_ids());
        assert!(sample_seed_subset(&catalog, 9, 0).is_err());
        assert_eq!(sample_seed_subset(&catalog, 3, 1).unwrap(), sample_seed_subset(&catalog, 3, 1).unwrap());
    }

    #[test]
    fn missing_alpha_is_a_config_error() {
        let spec = SweepSpec {
            alphas: vec![5.0],
            ..SweepSpec::default()
        };
        assert!(matches!(
            run_experiment(&spec, &PreparedSet::default(), None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn reports_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r/results.jsonl");
        let r = EvalReport {
            accuracy: 0.75,
            mse: 0.01,
            scorer_tag: "E".into(),
            method_tag: "baseline".into(),
            alpha: 2.0,
            omega_bar: 0.5,
            seeds: 8,
            backbone: "small".into(),
        };
        append_reports(&path, &[r.clone()]).unwrap();
        append_reports(&path, &[r.clone()]).unwrap();
        assert_eq!(read_reports(&path).unwrap(), vec![r.clone(), r]);
    }
}
