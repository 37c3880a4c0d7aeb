use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use memo_core::experiment::append_reports;
use memo_core::gapgen::{build_gap_dataset, sample_mask, BuildOptions};
use memo_core::image::{load_image, save_image, select_seed_pool, ImageSet};
use memo_core::metrics::{accuracy_metric, mse_metric, topn_curve, METHOD_BASELINE, METHOD_SCUBE};
use memo_core::scorer::{rank_correlation, split_indices, train_scorer};
use memo_core::selector::{baseline_predict, rank_seeds, train_selector_with_report};
use memo_core::synth::{train_seed_network, FeatureExtractor, SeedNetworkStore, StyleTransfer};
use memo_core::synthetic::{with_alpha, BrightnessTransfer};
use memo_core::{
    BaselineVector, EvalReport, GapMatrix, GapMeta, ScoredDataset, ScorerModel, SeedCatalog, SeedRanking,
    SelectorModel, SynthesisConfig, Synthesizer, TrainConfig,
};
use memo_service::{ServiceConfig, SynthesizerKind};
use serde::{Deserialize, Serialize};

use crate::config::CliConfig;
use crate::{Cli, Command, TrainArgs};

/// Bad arguments that clap cannot check, such as a `--top-q` larger than
/// the catalog. Exits with the usage status.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Serialize, Deserialize)]
struct Label {
    image_id: String,
    score: f64,
}

fn read_labels(path: &Path) -> Result<Vec<Label>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
        .collect()
}

fn write_labels(path: &Path, labels: &[&Label]) -> Result<()> {
    let mut out = String::new();
    for l in labels {
        out.push_str(&serde_json::to_string(l)?);
        out.push('\n');
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

fn load_images(dir: &Path, cfg: &CliConfig) -> Result<ImageSet> {
    let set = ImageSet::load_dir(dir, cfg.image_size).with_context(|| format!("loading images from {}", dir.display()))?;
    if set.is_empty() {
        bail!("no PNG or JPEG images in {}", dir.display());
    }
    log::info!("loaded {} images from {}", set.len(), dir.display());
    Ok(set)
}

fn load_catalog(dir: &Path, cfg: &CliConfig) -> Result<SeedCatalog> {
    SeedCatalog::load(dir, cfg.image_size).with_context(|| format!("loading seed catalog {}", dir.display()))
}

fn load_scorer(spec: &str) -> Result<ScorerModel> {
    ScorerModel::from_spec(spec).with_context(|| format!("loading scorer {spec}"))
}

fn load_selector(path: &Path) -> Result<SelectorModel> {
    SelectorModel::load(path).with_context(|| format!("loading selector {}", path.display()))
}

fn build_synthesizer(cfg: &CliConfig, kind: SynthesizerKind) -> Box<dyn Synthesizer> {
    match kind {
        SynthesizerKind::Brightness => Box::new(BrightnessTransfer),
        SynthesizerKind::Style => {
            let mut s = StyleTransfer::new(FeatureExtractor::new(cfg.extractor_seed), cfg.synthesis.clone())
                .with_size(cfg.image_size);
            if let Some(dir) = &cfg.seed_networks {
                s = s.with_networks(SeedNetworkStore::new(dir));
            }
            Box::new(s)
        }
    }
}

fn train_config(base: TrainConfig, args: &TrainArgs) -> TrainConfig {
    TrainConfig {
        iterations: args.iterations.unwrap_or(base.iterations),
        learning_rate: args.learning_rate.unwrap_or(base.learning_rate),
        batch_size: args.batch_size.unwrap_or(base.batch_size),
        input_size: args.input_size.unwrap_or(base.input_size),
        backbone: args.backbone.unwrap_or(base.backbone),
        rng_seed: args.rng_seed,
        ..base
    }
}

/// Prints `value` as JSON, or the text lines from `text`.
fn emit<T: Serialize>(json: bool, value: &T, text: impl FnOnce() -> Vec<String>) -> Result<()> {
    if json {
        println!("{}", serde_json::to_string(value)?);
    } else {
        for line in text() {
            println!("{line}");
        }
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = CliConfig::load(cli.config.as_deref())?;
    let json = cli.json;
    match &cli.command {
        Command::TrainScorer {
            images,
            labels,
            out,
            tag,
            train,
        } => {
            let images = load_images(images, &cfg)?;
            let labels = read_labels(labels)?;
            let items = labels
                .iter()
                .map(|l| Ok((images.require(&l.image_id)?.clone(), l.score)))
                .collect::<Result<Vec<_>>>()?;
            let data = ScoredDataset::new(items)?;
            let config = train_config(TrainConfig::scorer(), train);
            log::info!("training scorer {tag} on {} images for {} steps", data.len(), config.iterations);
            let model = train_scorer(&data, &config)?.with_tag(tag.clone());
            model.save(out)?;
            let predicted = data.items().iter().map(|(img, _)| model.predict(img)).collect::<memo_core::Result<Vec<_>>>()?;
            let actual: Vec<f64> = data.items().iter().map(|(_, s)| *s).collect();
            let rho = rank_correlation(&predicted, &actual)?;
            let summary = serde_json::json!({ "tag": tag, "path": out, "images": data.len(), "train_rank_correlation": rho });
            emit(json, &summary, || {
                vec![format!("saved scorer {tag} to {} (training rank correlation {rho:.4})", out.display())]
            })
        }

        Command::SplitScorerData {
            labels,
            out_dir,
            rng_seed,
        } => {
            let labels = read_labels(labels)?;
            let (a, b) = split_indices(labels.len(), *rng_seed)?;
            fs::create_dir_all(out_dir)?;
            let (pa, pb) = (out_dir.join("internal.jsonl"), out_dir.join("external.jsonl"));
            write_labels(&pa, &a.iter().map(|&i| &labels[i]).collect::<Vec<_>>())?;
            write_labels(&pb, &b.iter().map(|&i| &labels[i]).collect::<Vec<_>>())?;
            let summary = serde_json::json!({ "internal": pa, "external": pb, "size": a.len() });
            emit(json, &summary, || {
                vec![
                    format!("{}\t{}", pa.display(), a.len()),
                    format!("{}\t{}", pb.display(), b.len()),
                ]
            })
        }

        Command::BuildSeeds {
            candidates,
            k,
            scorer,
            out,
        } => {
            let scorer = load_scorer(scorer.as_deref().unwrap_or(&cfg.scorer))?;
            let candidates = load_images(candidates, &cfg)?;
            let catalog = select_seed_pool(candidates.images(), &scorer, *k)?;
            let out = out.clone().unwrap_or_else(|| cfg.catalog.clone());
            catalog.save(&out)?;
            emit(json, &catalog.seeds().iter().map(|s| (&s.seed_id, s.memorability)).collect::<Vec<_>>(), || {
                catalog.seeds().iter().map(|s| format!("{}\t{}", s.seed_id, s.memorability)).collect()
            })
        }

        Command::TrainSynth {
            images,
            catalog,
            out,
            alpha,
            iterations,
            step_size,
            rng_seed,
        } => {
            let catalog_dir = catalog.clone().unwrap_or_else(|| cfg.catalog.clone());
            let mut catalog = load_catalog(&catalog_dir, &cfg)?;
            let images = load_images(images, &cfg)?;
            let net_dir = out.clone().or_else(|| cfg.seed_networks.clone()).unwrap_or_else(|| PathBuf::from("seed-networks"));
            fs::create_dir_all(&net_dir)?;
            let store = SeedNetworkStore::new(&net_dir);
            let config = SynthesisConfig {
                alpha: *alpha,
                iterations: iterations.unwrap_or(cfg.synthesis.iterations),
                step_size: step_size.unwrap_or(0.01),
                rng_seed: *rng_seed,
            };
            let fx = FeatureExtractor::new(cfg.extractor_seed);
            let n = catalog.len();
            for (i, seed) in catalog.seeds_mut().iter_mut().enumerate() {
                log::info!("training network {}/{n} for {}", i + 1, seed.seed_id);
                let net = train_seed_network(seed, images.images(), &fx, &config)?;
                seed.model_ref = Some(store.save(&net)?);
            }
            catalog.save(&catalog_dir)?;
            let refs: Vec<(&str, Option<&str>)> =
                catalog.seeds().iter().map(|s| (s.seed_id.as_str(), s.model_ref.as_deref())).collect();
            emit(json, &refs, || {
                refs.iter().map(|(id, r)| format!("{id}\t{}", r.unwrap_or("-"))).collect()
            })
        }

        Command::GenGaps {
            images,
            catalog,
            scorer,
            omega,
            alpha,
            rng_seed,
            workers,
            synthesizer,
            out,
            resume,
        } => {
            let images = load_images(images, &cfg)?;
            let catalog = load_catalog(catalog.as_deref().unwrap_or(&cfg.catalog), &cfg)?;
            let scorer = load_scorer(scorer.as_deref().unwrap_or(&cfg.scorer))?;
            let synth = build_synthesizer(&cfg, synthesizer.unwrap_or(cfg.synthesizer));
            let mask = sample_mask(images.len(), catalog.len(), *omega, *rng_seed).map_err(|e| usage(e.to_string()))?;
            log::info!("synthesizing {} of {} pairs", mask.count(), images.len() * catalog.len());
            let options = BuildOptions {
                workers: *workers,
                checkpoint: resume.then(|| out.clone()),
            };
            let meta = GapMeta::new(*omega, *rng_seed, scorer.tag(), *alpha);
            let gaps = build_gap_dataset(&images, &catalog, &scorer, &with_alpha(synth.as_ref(), *alpha), &mask, meta, &options)?;
            gaps.write(out)?;
            let summary = serde_json::json!({
                "path": out,
                "images": gaps.rows(),
                "seeds": gaps.cols(),
                "observed": gaps.observed_count(),
                "omega_bar": gaps.omega_bar(),
            });
            emit(json, &summary, || {
                vec![format!(
                    "{} of {} pairs observed, written to {}",
                    gaps.observed_count(),
                    gaps.rows() * gaps.cols(),
                    out.display()
                )]
            })
        }

        Command::TrainSelector {
            gaps,
            images,
            validation_gaps,
            eval_every,
            patience,
            out,
            train,
        } => {
            let gaps = GapMatrix::read(gaps)?;
            let validation = validation_gaps.as_ref().map(GapMatrix::read).transpose()?;
            let images = load_images(images, &cfg)?;
            let base = TrainConfig::selector();
            let config = TrainConfig {
                eval_every: eval_every.unwrap_or(base.eval_every),
                patience: patience.or(base.patience),
                ..train_config(base, train)
            };
            log::info!("training selector on {} observed gaps for {} steps", gaps.observed_count(), config.iterations);
            let (model, report) = train_selector_with_report(&gaps, validation.as_ref(), &images, &config)?;
            let out = out.clone().unwrap_or_else(|| cfg.selector.clone());
            model.save(&out)?;
            let summary = serde_json::json!({
                "path": out,
                "seeds": model.output_dim(),
                "steps_run": report.steps_run,
                "best_step": report.best_step,
                "best_validation": report.best_validation,
            });
            emit(json, &summary, || {
                let mut line = format!("saved selector to {} after {} steps", out.display(), report.steps_run);
                if let Some(v) = report.best_validation {
                    line.push_str(&format!(" (best validation {v:.6} at step {})", report.best_step));
                }
                vec![line]
            })
        }

        Command::Evaluate {
            selector,
            test_gaps,
            images,
            train_gaps,
            omega_bar,
            results,
        } => {
            let ev = Evaluation::load(&cfg, selector.as_deref(), test_gaps, images, train_gaps.as_deref())?;
            let omega_bar = omega_bar.or(ev.train.as_ref().map(|t| t.meta().omega_target)).unwrap_or(1.0);
            let meta = ev.test.meta();
            let report = |method: &str, rows: &[Vec<f64>]| -> Result<EvalReport> {
                let r = EvalReport {
                    accuracy: accuracy_metric(&ev.truth, rows)?,
                    mse: mse_metric(&ev.truth, rows)?,
                    scorer_tag: meta.scorer_tag.clone(),
                    method_tag: method.to_string(),
                    alpha: meta.alpha,
                    omega_bar,
                    seeds: ev.seed_ids.len(),
                    backbone: ev.selector.config().backbone.to_string(),
                };
                r.validate()?;
                Ok(r)
            };
            let mut reports = vec![report(METHOD_SCUBE, &ev.predictions)?];
            if let Some(rows) = ev.baseline_rows()? {
                reports.push(report(METHOD_BASELINE, &rows)?);
            }
            if let Some(path) = results {
                append_reports(path, &reports)?;
            }
            if json {
                for r in &reports {
                    println!("{}", serde_json::to_string(r)?);
                }
                return Ok(());
            }
            println!("method\tscorer\talpha\tomega_bar\tseeds\taccuracy\tmse");
            for r in &reports {
                println!(
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    r.method_tag, r.scorer_tag, r.alpha, r.omega_bar, r.seeds, r.accuracy, r.mse
                );
            }
            Ok(())
        }

        Command::Topn {
            selector,
            test_gaps,
            images,
            train_gaps,
            n,
        } => {
            let ev = Evaluation::load(&cfg, selector.as_deref(), test_gaps, images, train_gaps.as_deref())?;
            let s = ev.seed_ids.len();
            if let Some(bad) = n.iter().find(|&&v| v == 0) {
                return Err(usage(format!("N must be positive, got {bad}")));
            }
            let mut n_values: Vec<usize> = n.iter().map(|&v| v.min(s)).collect();
            n_values.dedup();
            let mut curves = Vec::new();
            let mut methods = vec![(METHOD_SCUBE, ev.predictions.clone())];
            if let Some(rows) = ev.baseline_rows()? {
                methods.push((METHOD_BASELINE, rows));
            }
            for (method, rows) in methods {
                let rankings = rows.iter().map(|r| rank_seeds(r, &ev.seed_ids)).collect::<memo_core::Result<Vec<SeedRanking>>>()?;
                let curve = topn_curve(&rankings, &ev.truth, &ev.seed_ids, &n_values)?;
                curves.push(serde_json::json!({ "method_tag": method, "scorer_tag": ev.test.meta().scorer_tag, "curve": curve }));
            }
            emit(json, &curves, || {
                let mut lines = vec!["method\tN\tmean_gap".to_string()];
                for c in &curves {
                    let curve = &c["curve"];
                    for (k, nv) in curve["n_values"].as_array().into_iter().flatten().enumerate() {
                        lines.push(format!("{}\t{}\t{}", c["method_tag"].as_str().unwrap_or(""), nv, curve["mean_gaps"][k]));
                    }
                }
                lines
            })
        }

        Command::Recommend { image, top_q, selector } => {
            let selector = load_selector(selector.as_deref().unwrap_or(&cfg.selector))?;
            let s = selector.output_dim();
            let q = top_q.unwrap_or(s);
            if q == 0 || q > s {
                return Err(usage(format!("--top-q must lie in 1..={s}, got {q}")));
            }
            let img = load_image(image, cfg.image_size)?;
            let ranking = selector.rank(&img)?.top(q);
            if ranking.keep_original {
                log::info!("no seed is predicted to increase memorability");
            }
            emit(json, &ranking, || {
                ranking.entries.iter().map(|e| format!("{} {}", e.seed_id, e.predicted_gap)).collect()
            })
        }

        Command::Stylize {
            image,
            seed,
            alpha,
            out,
            catalog,
            synthesizer,
            scorer,
        } => {
            if !(alpha.is_finite() && *alpha >= 0.0) {
                return Err(usage(format!("--alpha must be finite and non-negative, got {alpha}")));
            }
            let catalog = load_catalog(catalog.as_deref().unwrap_or(&cfg.catalog), &cfg)?;
            let seed = catalog.get(seed).with_context(|| format!("seed {seed} is not in the catalog"))?;
            let content = load_image(image, cfg.image_size)?;
            let synth = build_synthesizer(&cfg, synthesizer.unwrap_or(cfg.synthesizer));
            let styled = synth.synthesize(&content, seed, *alpha)?;
            save_image(&styled, out)?;
            let scores = match scorer {
                Some(spec) => {
                    let scorer = load_scorer(spec)?;
                    Some((scorer.predict(&content)?, scorer.predict(&styled)?))
                }
                None => None,
            };
            let summary = serde_json::json!({
                "path": out,
                "seed_id": seed.seed_id,
                "alpha": alpha,
                "original_memorability": scores.map(|s| s.0),
                "memorability": scores.map(|s| s.1),
            });
            emit(json, &summary, || {
                let mut lines = vec![format!("wrote {}", out.display())];
                if let Some((before, after)) = scores {
                    lines.push(format!("memorability {before} -> {after} (gap {})", after - before));
                }
                lines
            })
        }

        Command::Serve => {
            let mut config: ServiceConfig = cfg.service.clone();
            config.apply_env(|k| std::env::var(k).ok())?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(memo_service::serve(&config))?;
            Ok(())
        }
    }
}

/// Selector predictions against fully observed held-out gaps.
struct Evaluation {
    selector: SelectorModel,
    seed_ids: Vec<String>,
    test: GapMatrix,
    truth: Vec<Vec<f64>>,
    predictions: Vec<Vec<f64>>,
    train: Option<GapMatrix>,
}

impl Evaluation {
    fn load(cfg: &CliConfig, selector: Option<&Path>, test: &Path, images: &Path, train: Option<&Path>) -> Result<Self> {
        let selector = load_selector(selector.unwrap_or(&cfg.selector))?;
        let seed_ids = selector.seed_ids().to_vec();
        let test = GapMatrix::read(test)?.select_seeds(&seed_ids)?;
        let truth = test.dense_rows().context("test gaps must be fully observed")?;
        let images = load_images(images, cfg)?;
        let predictions = test
            .image_ids()
            .iter()
            .map(|id| selector.predict(images.require(id)?))
            .collect::<memo_core::Result<Vec<_>>>()?;
        let train = train.map(GapMatrix::read).transpose()?.map(|t| t.select_seeds(&seed_ids)).transpose()?;
        Ok(Self {
            selector,
            seed_ids,
            test,
            truth,
            predictions,
            train,
        })
    }

    /// Baseline predictions, when training gaps were given. Seeds never
    /// observed in training are predicted as zero gap.
    fn baseline_rows(&self) -> Result<Option<Vec<Vec<f64>>>> {
        let Some(train) = &self.train else {
            return Ok(None);
        };
        let (baseline, filled) = BaselineVector::with_fill(train, 0.0);
        if !filled.is_empty() {
            log::warn!("no training gaps for {} seeds; baseline predicts 0 for them", filled.len());
        }
        Ok(Some(vec![baseline_predict(&baseline); self.truth.len()]))
    }
}
