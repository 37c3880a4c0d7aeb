//! Memorability-gap datasets: `m_gs = M(I_gs) - M(I_g)` for the observed
//! image-seed pairs of a Bernoulli mask.
//!
//! File format (line-delimited JSON): one header record
//! `{image_ids, seed_ids, omega_target, rng_seed, scorer_tag, alpha}`
//! followed by `{image_id, seed_id, gap}` records. A missing record means the
//! pair is unobserved.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ImageSet, ImageTensor, SeedCatalog, StyleSeed};
use crate::scorer::ScorerModel;

/// Provenance written to the gap-file header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapMeta {
    pub omega_target: f64,
    pub rng_seed: u64,
    pub scorer_tag: String,
    pub alpha: f64,
}

impl GapMeta {
    pub fn new(omega_target: f64, rng_seed: u64, scorer_tag: impl Into<String>, alpha: f64) -> Self {
        Self {
            omega_target,
            rng_seed,
            scorer_tag: scorer_tag.into(),
            alpha,
        }
    }
}

/// `G x S` gaps where only observed pairs carry a value.
#[derive(Clone, Debug, PartialEq)]
pub struct GapMatrix {
    image_ids: Vec<String>,
    seed_ids: Vec<String>,
    entries: Vec<Option<f64>>,
    meta: GapMeta,
}

#[derive(Serialize, Deserialize)]
struct Header {
    image_ids: Vec<String>,
    seed_ids: Vec<String>,
    #[serde(flatten)]
    meta: GapMeta,
}

#[derive(Serialize, Deserialize)]
struct Record {
    image_id: String,
    seed_id: String,
    gap: f64,
}

fn check_gap(gap: f64) -> Result<()> {
    if !gap.is_finite() || !(-1.0..=1.0).contains(&gap) {
        return Err(Error::arg(format!("gap {gap} outside [-1, 1]")));
    }
    Ok(())
}

impl GapMatrix {
    /// A matrix with every pair unobserved.
    pub fn empty(image_ids: Vec<String>, seed_ids: Vec<String>, meta: GapMeta) -> Self {
        let n = image_ids.len() * seed_ids.len();
        Self {
            image_ids,
            seed_ids,
            entries: vec![None; n],
            meta,
        }
    }

    /// Fully observed matrix from row-major values.
    pub fn from_rows(image_ids: Vec<String>, seed_ids: Vec<String>, rows: &[Vec<f64>], meta: GapMeta) -> Result<Self> {
        if rows.len() != image_ids.len() || rows.iter().any(|r| r.len() != seed_ids.len()) {
            return Err(Error::arg("gap rows do not match the id lists"));
        }
        let mut m = Self::empty(image_ids, seed_ids, meta);
        for (g, row) in rows.iter().enumerate() {
            for (s, &v) in row.iter().enumerate() {
                m.set(g, s, v)?;
            }
        }
        Ok(m)
    }

    pub fn image_ids(&self) -> &[String] {
        &self.image_ids
    }

    pub fn seed_ids(&self) -> &[String] {
        &self.seed_ids
    }

    pub fn meta(&self) -> &GapMeta {
        &self.meta
    }

    pub fn meta_mut(&mut self) -> &mut GapMeta {
        &mut self.meta
    }

    pub fn rows(&self) -> usize {
        self.image_ids.len()
    }

    pub fn cols(&self) -> usize {
        self.seed_ids.len()
    }

    pub fn get(&self, g: usize, s: usize) -> Option<f64> {
        self.entries[g * self.cols() + s]
    }

    pub fn set(&mut self, g: usize, s: usize, gap: f64) -> Result<()> {
        check_gap(gap)?;
        let cols = self.cols();
        self.entries[g * cols + s] = Some(gap);
        Ok(())
    }

    pub fn clear(&mut self, g: usize, s: usize) {
        let cols = self.cols();
        self.entries[g * cols + s] = None;
    }

    pub fn is_observed(&self, g: usize, s: usize) -> bool {
        self.get(g, s).is_some()
    }

    pub fn observed_count(&self) -> usize {
        self.entries.iter().filter(|e| e.is_some()).count()
    }

    /// Realized mask density `Σω / (G·S)`.
    pub fn omega_bar(&self) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        self.observed_count() as f64 / self.entries.len() as f64
    }

    pub fn mask(&self) -> Mask {
        Mask {
            rows: self.rows(),
            cols: self.cols(),
            bits: self.entries.iter().map(Option::is_some).collect(),
        }
    }

    /// Targets (zero where unobserved) and the observation mask for row `g`.
    pub fn row_targets(&self, g: usize) -> (Vec<f64>, Vec<bool>) {
        let row = &self.entries[g * self.cols()..(g + 1) * self.cols()];
        (row.iter().map(|e| e.unwrap_or(0.0)).collect(), row.iter().map(Option::is_some).collect())
    }

    /// Fully observed rows as dense vectors; errors on any missing entry.
    pub fn dense_rows(&self) -> Result<Vec<Vec<f64>>> {
        (0..self.rows())
            .map(|g| {
                (0..self.cols())
                    .map(|s| {
                        self.get(g, s).ok_or_else(|| {
                            Error::arg(format!(
                                "pair ({}, {}) is unobserved",
                                self.image_ids[g], self.seed_ids[s]
                            ))
                        })
                    })
                    .collect()
            })
            .collect()
    }

    pub fn row_index(&self, image_id: &str) -> Option<usize> {
        self.image_ids.iter().position(|i| i == image_id)
    }

    pub fn col_index(&self, seed_id: &str) -> Option<usize> {
        self.seed_ids.iter().position(|i| i == seed_id)
    }

    /// Keeps only entries where `mask` is set.
    pub fn masked(&self, mask: &Mask) -> Result<GapMatrix> {
        if (mask.rows, mask.cols) != (self.rows(), self.cols()) {
            return Err(Error::arg(format!(
                "mask is {}x{} but gap matrix is {}x{}",
                mask.rows,
                mask.cols,
                self.rows(),
                self.cols()
            )));
        }
        let mut out = self.clone();
        for (e, &keep) in out.entries.iter_mut().zip(&mask.bits) {
            if !keep {
                *e = None;
            }
        }
        Ok(out)
    }

    /// Column subset in the given seed order.
    pub fn select_seeds(&self, seed_ids: &[String]) -> Result<GapMatrix> {
        let cols = seed_ids
            .iter()
            .map(|id| self.col_index(id).ok_or_else(|| Error::NotFound(format!("seed {id}"))))
            .collect::<Result<Vec<_>>>()?;
        let mut out = GapMatrix::empty(self.image_ids.clone(), seed_ids.to_vec(), self.meta.clone());
        for g in 0..self.rows() {
            for (new_s, &s) in cols.iter().enumerate() {
                out.entries[g * cols.len() + new_s] = self.get(g, s);
            }
        }
        Ok(out)
    }

    /// Row subset in the given image order.
    pub fn select_images(&self, image_ids: &[String]) -> Result<GapMatrix> {
        let mut out = GapMatrix::empty(image_ids.to_vec(), self.seed_ids.clone(), self.meta.clone());
        for (new_g, id) in image_ids.iter().enumerate() {
            let g = self.row_index(id).ok_or_else(|| Error::NotFound(format!("image {id}")))?;
            for s in 0..self.cols() {
                out.entries[new_g * self.cols() + s] = self.get(g, s);
            }
        }
        Ok(out)
    }

    fn header_line(&self) -> Result<String> {
        Ok(serde_json::to_string(&Header {
            image_ids: self.image_ids.clone(),
            seed_ids: self.seed_ids.clone(),
            meta: self.meta.clone(),
        })?)
    }

    fn row_lines(&self, g: usize) -> Result<String> {
        let mut out = String::new();
        for s in 0..self.cols() {
            if let Some(gap) = self.get(g, s) {
                out.push_str(&serde_json::to_string(&Record {
                    image_id: self.image_ids[g].clone(),
                    seed_id: self.seed_ids[s].clone(),
                    gap,
                })?);
                out.push('\n');
            }
        }
        Ok(out)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = self.header_line()?;
        out.push('\n');
        for g in 0..self.rows() {
            out.push_str(&self.row_lines(g)?);
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<GapMatrix> {
        Self::parse(text, false)
    }

    // With `tolerate_torn_tail`, an unparsable final line (an interrupted
    // write) is dropped instead of failing the read.
    fn parse(text: &str, tolerate_torn_tail: bool) -> Result<GapMatrix> {
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        let Some((first, rest)) = lines.split_first() else {
            return Err(Error::arg("gap file is empty"));
        };
        let header: Header = serde_json::from_str(first)?;
        let mut m = GapMatrix::empty(header.image_ids, header.seed_ids, header.meta);
        let rows: HashMap<&str, usize> = m.image_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let cols: HashMap<&str, usize> = m.seed_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let mut updates = Vec::with_capacity(rest.len());
        for (i, line) in rest.iter().enumerate() {
            let record: Record = match serde_json::from_str(line) {
                Ok(r) => r,
                Err(_) if tolerate_torn_tail && i + 1 == rest.len() => break,
                Err(e) => return Err(e.into()),
            };
            let g = *rows
                .get(record.image_id.as_str())
                .ok_or_else(|| Error::arg(format!("record for unknown image {}", record.image_id)))?;
            let s = *cols
                .get(record.seed_id.as_str())
                .ok_or_else(|| Error::arg(format!("record for unknown seed {}", record.seed_id)))?;
            updates.push((g, s, record.gap));
        }
        for (g, s, gap) in updates {
            if m.is_observed(g, s) {
                return Err(Error::arg(format!(
                    "duplicate record for ({}, {})",
                    m.image_ids[g], m.seed_ids[s]
                )));
            }
            m.set(g, s, gap)?;
        }
        Ok(m)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_jsonl()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<GapMatrix> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::NotFound(format!("{}: {e}", path.display())))?;
        Self::from_jsonl(&text)
    }
}

/// Binary `G x S` observation mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn full(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            bits: vec![true; rows * cols],
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            bits: vec![false; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<bool>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::arg("ragged mask rows"));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            bits: rows.concat(),
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, g: usize, s: usize) -> bool {
        self.bits[g * self.cols + s]
    }

    pub fn row(&self, g: usize) -> &[bool] {
        &self.bits[g * self.cols..(g + 1) * self.cols]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn density(&self) -> f64 {
        if self.bits.is_empty() {
            0.0
        } else {
            self.count() as f64 / self.bits.len() as f64
        }
    }
}

/// I.i.d. Bernoulli(`omega_target`) mask, deterministic in `rng_seed`.
pub fn sample_mask(rows: usize, cols: usize, omega_target: f64, rng_seed: u64) -> Result<Mask> {
    if !(omega_target > 0.0 && omega_target <= 1.0) {
        return Err(Error::arg(format!("omega must lie in (0, 1], got {omega_target}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    Ok(Mask {
        rows,
        cols,
        bits: (0..rows * cols).map(|_| rng.random::<f64>() < omega_target).collect(),
    })
}

/// `M(synthesized) - M(original)`.
pub fn compute_gap(original: &ImageTensor, synthesized: &ImageTensor, scorer: &ScorerModel) -> Result<f64> {
    let gap = scorer.predict(synthesized)? - scorer.predict(original)?;
    Ok(gap.clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, Default)]
pub struct BuildOptions {
    /// Worker threads for pair synthesis; 0 or 1 runs inline.
    pub workers: usize,
    /// Append completed rows here and resume from it if it exists.
    pub checkpoint: Option<PathBuf>,
}

/// Synthesizes and scores every masked pair.
///
/// Unmasked pairs are never synthesized. A failed synthesis leaves its pair
/// unobserved and logs a warning. With a checkpoint path, each completed row
/// is appended to the file as it finishes; rerunning with the same inputs
/// skips rows already present.
pub fn build_gap_dataset<F>(
    images: &ImageSet,
    catalog: &SeedCatalog,
    scorer: &ScorerModel,
    synth: &F,
    mask: &Mask,
    meta: GapMeta,
    options: &BuildOptions,
) -> Result<GapMatrix>
where
    F: Fn(&ImageTensor, &StyleSeed) -> Result<ImageTensor> + Sync,
{
    if mask.dims() != (images.len(), catalog.len()) {
        return Err(Error::arg(format!(
            "mask is {:?} but there are {} images and {} seeds",
            mask.dims(),
            images.len(),
            catalog.len()
        )));
    }
    let mut gaps = GapMatrix::empty(images.ids().to_vec(), catalog.seed_ids(), meta);
    let mut done = vec![false; images.len()];
    let mut writer = match &options.checkpoint {
        Some(path) => Some(open_checkpoint(path, &mut gaps, &mut done)?),
        None => None,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;

    for (g, (image_id, image)) in images.iter().enumerate() {
        if done[g] {
            continue;
        }
        let wanted: Vec<usize> = (0..catalog.len()).filter(|&s| mask.get(g, s)).collect();
        if wanted.is_empty() {
            continue;
        }
        let base = scorer.predict(image)?;
        let work = |s: &usize| -> (usize, Result<f64>) {
            let seed = &catalog.seeds()[*s];
            let result = synth(image, seed).and_then(|out| Ok((scorer.predict(&out)? - base).clamp(-1.0, 1.0)));
            (*s, result)
        };
        let results: Vec<(usize, Result<f64>)> = if options.workers > 1 {
            pool.install(|| wanted.par_iter().map(work).collect())
        } else {
            wanted.iter().map(work).collect()
        };
        for (s, result) in results {
            match result {
                Ok(gap) => gaps.set(g, s, gap)?,
                Err(e) => log::warn!(
                    "skipping pair ({image_id}, {}): {e}",
                    catalog.seeds()[s].seed_id
                ),
            }
        }
        if let Some(w) = writer.as_mut() {
            w.write_all(gaps.row_lines(g)?.as_bytes())?;
            w.flush()?;
        }
        log::debug!("gap row {}/{} done", g + 1, images.len());
    }
    Ok(gaps)
}

fn open_checkpoint(path: &Path, gaps: &mut GapMatrix, done: &mut [bool]) -> Result<BufWriter<File>> {
    if path.exists() {
        let text = fs::read_to_string(path)?;
        if !text.trim().is_empty() {
            let previous = GapMatrix::parse(&text, true)?;
            if previous.image_ids != gaps.image_ids
                || previous.seed_ids != gaps.seed_ids
                || previous.meta != gaps.meta
            {
                return Err(Error::Config(format!(
                    "{} was written for a different dataset; remove it to start over",
                    path.display()
                )));
            }
            for (g, flag) in done.iter_mut().enumerate() {
                for s in 0..gaps.cols() {
                    if let Some(v) = previous.get(g, s) {
                        gaps.set(g, s, v)?;
                        *flag = true;
                    }
                }
            }
            // Rewrite cleanly so a torn trailing line does not survive.
            fs::write(path, gaps.to_jsonl()?)?;
            let file = OpenOptions::new().append(true).open(path)?;
            return Ok(BufWriter::new(file));
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(gaps.header_line()?.as_bytes())?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(w)
}

/// Seeded shuffle followed by contiguous train/validation/test slices in the
/// proportions `ratios`.
pub fn split_dataset<T: Clone>(items: &[T], ratios: (usize, usize, usize), rng_seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let (a, b, c) = ratios;
    let total = a + b + c;
    if a == 0 || b == 0 || c == 0 {
        return Err(Error::arg("every split ratio must be positive"));
    }
    if items.len() < total.max(10) {
        return Err(Error::arg(format!("need at least {} items to split, got {}", total.max(10), items.len())));
    }
    let n = items.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
    let n_train = n * a / total;
    let n_val = n * b / total;
    let pick = |r: &[usize]| r.iter().map(|&i| items[i].clone()).collect::<Vec<_>>();
    Ok((
        pick(&order[..n_train]),
        pick(&order[n_train..n_train + n_val]),
        pick(&order[n_train + n_val..]),
    ))
}
