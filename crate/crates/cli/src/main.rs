//! `memo`: command-line driver for the memorability pipeline.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use memo_core::Backbone;
use memo_service::SynthesizerKind;

#[derive(Parser, Debug)]
#[command(name = "memo", version, about = "Score, stylize and recommend style seeds for images")]
pub struct Cli {
    /// Settings file; `memo.toml` in the working directory is used if present.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    /// Only log warnings and errors to stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

/// Optimizer overrides shared by the trainers.
#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Network input as HxW, e.g. 64x64.
    #[arg(long, value_parser = parse_size)]
    pub input_size: Option<(usize, usize)>,
    #[arg(long, value_parser = parse_backbone)]
    pub backbone: Option<Backbone>,
    #[arg(long, default_value_t = 0)]
    pub rng_seed: u64,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit a memorability scorer to labeled images.
    TrainScorer {
        #[arg(long)]
        images: PathBuf,
        /// JSON lines of `{"image_id", "score"}`.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "M")]
        tag: String,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Split a label file into two disjoint halves for the internal and external scorers.
    SplitScorerData {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        rng_seed: u64,
    },
    /// Build a seed catalog from the k most and k least memorable candidates.
    BuildSeeds {
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        scorer: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one feed-forward stylization network per seed.
    TrainSynth {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 2.0)]
        alpha: f64,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        step_size: Option<f64>,
        #[arg(long, default_value_t = 0)]
        rng_seed: u64,
    },
    /// Synthesize and score a random subset of image-seed pairs.
    GenGaps {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long)]
        scorer: Option<String>,
        /// Fraction of pairs to observe.
        #[arg(long, default_value_t = 1.0)]
        omega: f64,
        #[arg(long, default_value_t = 2.0)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        rng_seed: u64,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long, value_parser = parse_synthesizer)]
        synthesizer: Option<SynthesizerKind>,
        #[arg(long)]
        out: PathBuf,
        /// Continue an interrupted run recorded in `--out`.
        #[arg(long)]
        resume: bool,
    },
    /// Fit the selector to a gap file.
    TrainSelector {
        #[arg(long)]
        gaps: PathBuf,
        /// Directory holding every image named in the gap files.
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        validation_gaps: Option<PathBuf>,
        #[arg(long)]
        eval_every: Option<usize>,
        #[arg(long)]
        patience: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Accuracy and MSE of the selector, and of the baseline when training gaps are given.
    Evaluate {
        #[arg(long)]
        selector: Option<PathBuf>,
        /// Fully observed gaps of held-out images.
        #[arg(long)]
        test_gaps: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        train_gaps: Option<PathBuf>,
        #[arg(long)]
        omega_bar: Option<f64>,
        /// Append the records to this JSON lines file.
        #[arg(long)]
        results: Option<PathBuf>,
    },
    /// Mean true gap of the top-N recommendations.
    Topn {
        #[arg(long)]
        selector: Option<PathBuf>,
        #[arg(long)]
        test_gaps: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        train_gaps: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "1,3,10")]
        n: Vec<usize>,
    },
    /// Rank the catalog's seeds for one image.
    Recommend {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        top_q: Option<usize>,
        #[arg(long)]
        selector: Option<PathBuf>,
    },
    /// Apply one seed's style to an image.
    Stylize {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        seed: String,
        #[arg(long, default_value_t = 2.0)]
        alpha: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long, value_parser = parse_synthesizer)]
        synthesizer: Option<SynthesizerKind>,
        /// Also report the memorability change under this scorer.
        #[arg(long)]
        scorer: Option<String>,
    },
    /// Run the HTTP service.
    Serve,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once('x').ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    let (h, w) = (parse(h)?, parse(w)?);
    if h == 0 || w == 0 {
        return Err("sizes must be positive".into());
    }
    Ok((h, w))
}

fn parse_backbone(s: &str) -> Result<Backbone, String> {
    s.parse().map_err(|e: memo_core::Error| e.to_string())
}

fn parse_synthesizer(s: &str) -> Result<SynthesizerKind, String> {
    match s {
        "style" => Ok(SynthesizerKind::Style),
        "brightness" => Ok(SynthesizerKind::Brightness),
        other => Err(format!("unknown synthesizer {other:?} (expected style or brightness)")),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.quiet { log::LevelFilter::Warn } else { log::LevelFilter::Info })
        .parse_env("MEMO_LOG")
        .format_timestamp(None)
        .init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e.downcast_ref::<commands::UsageError>().is_some();
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_parse() {
        assert_eq!(parse_size("32x48"), Ok((32, 48)));
        assert!(parse_size("32").is_err());
        assert!(parse_size("0x4").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
