//! Memorability-increasing style transfer pipeline.
//!
//! - [`image`]: rasters, IO and the style-seed catalog
//! - [`scorer`]: memorability regressors, oracles and rank correlation
//! - [`synth`]: Gram-matrix style transfer and per-seed feed-forward networks
//! - [`gapgen`]: memorability-gap datasets with observation masks
//! - [`selector`]: masked-loss gap regression, seed ranking and the mean-gap baseline
//! - [`metrics`]: evaluation metrics and top-N curves
//! - [`experiment`]: sweep runner producing results tables
//! - [`synthetic`]: closed-form brightness tasks used by tests and demos

pub mod checkpoint;
pub mod error;
pub mod experiment;
pub mod gapgen;
pub mod image;
pub mod metrics;
pub mod nn;
pub mod scorer;
pub mod selector;
pub mod synth;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
pub use gapgen::{GapMatrix, GapMeta};
pub use image::{ImageTensor, SeedCatalog, StyleSeed};
pub use metrics::EvalReport;
pub use nn::Backbone;
pub use scorer::{Oracle, ScoredDataset, ScorerModel};
pub use selector::{BaselineVector, SeedRanking, SelectorModel};
pub use synth::{FeatureExtractor, SynthesisConfig, Synthesizer};
pub use train::TrainConfig;
