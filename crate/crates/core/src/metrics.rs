//! Evaluation metrics over image × seed gap matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::selector::SeedRanking;

pub const METHOD_SCUBE: &str = "scube";
pub const METHOD_BASELINE: &str = "baseline";

/// Unit step with `H(0) = 0`: a zero gap is not an increase.
pub fn heaviside(x: f64) -> Result<u8> {
    if !x.is_finite() {
        return Err(Error::arg(format!("heaviside of non-finite value {x}")));
    }
    Ok(u8::from(x > 0.0))
}

fn check_dims(truth: &[Vec<f64>], predicted: &[Vec<f64>]) -> Result<usize> {
    if truth.len() != predicted.len() {
        return Err(Error::arg(format!("{} true rows vs {} predicted rows", truth.len(), predicted.len())));
    }
    let mut cells = 0;
    for (v, (t, p)) in truth.iter().zip(predicted).enumerate() {
        if t.len() != p.len() {
            return Err(Error::arg(format!("row {v}: {} true vs {} predicted columns", t.len(), p.len())));
        }
        cells += t.len();
    }
    if cells == 0 {
        return Err(Error::arg("metrics need at least one image-seed pair"));
    }
    Ok(cells)
}

/// Mean squared error over all image-seed pairs.
pub fn mse_metric(truth: &[Vec<f64>], predicted: &[Vec<f64>]) -> Result<f64> {
    let cells = check_dims(truth, predicted)?;
    let sum: f64 = truth
        .iter()
        .zip(predicted)
        .flat_map(|(t, p)| t.iter().zip(p).map(|(a, b)| (a - b).powi(2)))
        .sum();
    Ok(sum / cells as f64)
}

/// Fraction of image-seed pairs whose true and predicted gaps agree on
/// whether memorability increases.
pub fn accuracy_metric(truth: &[Vec<f64>], predicted: &[Vec<f64>]) -> Result<f64> {
    let cells = check_dims(truth, predicted)?;
    let mut agree = 0usize;
    for (t, p) in truth.iter().zip(predicted) {
        for (a, b) in t.iter().zip(p) {
            if heaviside(*a)? == heaviside(*b)? {
                agree += 1;
            }
        }
    }
    Ok(agree as f64 / cells as f64)
}

/// One row of a results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub mse: f64,
    pub scorer_tag: String,
    pub method_tag: String,
    pub alpha: f64,
    pub omega_bar: f64,
    pub seeds: usize,
    pub backbone: String,
}

impl EvalReport {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.accuracy) {
            return Err(Error::arg(format!("accuracy {} outside [0, 1]", self.accuracy)));
        }
        if !(self.mse >= 0.0) {
            return Err(Error::arg(format!("mse {} is negative", self.mse)));
        }
        Ok(())
    }

    /// Accuracy as a percentage, the way results tables print it.
    pub fn accuracy_percent(&self) -> f64 {
        self.accuracy * 100.0
    }
}

/// Mean true gap of the top-N recommended seeds, averaged over images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopNCurve {
    pub n_values: Vec<usize>,
    pub mean_gaps: Vec<f64>,
    pub seeds: usize,
}

/// `rankings[v]` must order every seed named in `seed_ids`; `truth[v][s]`
/// is the true gap of image `v` with seed `seed_ids[s]`.
pub fn topn_curve(
    rankings: &[SeedRanking],
    truth: &[Vec<f64>],
    seed_ids: &[String],
    n_values: &[usize],
) -> Result<TopNCurve> {
    let s = seed_ids.len();
    if rankings.len() != truth.len() || rankings.is_empty() {
        return Err(Error::arg(format!("{} rankings for {} images", rankings.len(), truth.len())));
    }
    if let Some(&n) = n_values.iter().find(|&&n| n == 0 || n > s) {
        return Err(Error::arg(format!("N = {n} outside 1..={s}")));
    }
    let index: std::collections::HashMap<&str, usize> =
        seed_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut orders = Vec::with_capacity(rankings.len());
    for (v, ranking) in rankings.iter().enumerate() {
        if ranking.entries.len() != s || truth[v].len() != s {
            return Err(Error::arg(format!("image {v}: ranking or gaps do not cover {s} seeds")));
        }
        let order = ranking
            .entries
            .iter()
            .map(|e| {
                index
                    .get(e.seed_id.as_str())
                    .copied()
                    .ok_or_else(|| Error::arg(format!("unknown seed {}", e.seed_id)))
            })
            .collect::<Result<Vec<_>>>()?;
        orders.push(order);
    }
    let mean_gaps = n_values
        .iter()
        .map(|&n| {
            let total: f64 = orders
                .iter()
                .zip(truth)
                .map(|(order, t)| order[..n].iter().map(|&i| t[i]).sum::<f64>() / n as f64)
                .sum();
            total / orders.len() as f64
        })
        .collect();
    Ok(TopNCurve {
        n_values: n_values.to_vec(),
        mean_gaps,
        seeds: s,
    })
}

/// Mean predicted gap over each ranking's top N, per image.
pub fn topn_predicted(ranking: &SeedRanking, n: usize) -> Result<f64> {
    if n == 0 || n > ranking.entries.len() {
        return Err(Error::arg(format!("N = {n} outside 1..={}", ranking.entries.len())));
    }
    Ok(ranking.entries[..n].iter().map(|e| e.predicted_gap).sum::<f64>() / n as f64)
}
