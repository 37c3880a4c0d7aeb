use std::path::{Path, PathBuf};

use memo_core::SynthesisConfig;
use serde::{Deserialize, Serialize};

use crate::Error;

/// Which synthesizer backs `POST /images/{id}/synthesize`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthesizerKind {
    /// Gram-matrix style transfer, using seed networks when available.
    #[default]
    Style,
    /// Closed-form mean-brightness transfer, for demos and tests.
    Brightness,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    /// `oracle:<name>` or a scorer checkpoint path.
    pub scorer: String,
    pub selector: PathBuf,
    pub catalog: PathBuf,
    pub seed_networks: Option<PathBuf>,
    pub store: PathBuf,
    pub synthesizer: SynthesizerKind,
    pub synthesis: SynthesisConfig,
    pub synthesis_size: (usize, usize),
    pub extractor_seed: u64,
    pub max_upload_bytes: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            scorer: "models/scorer-m.ckpt".into(),
            selector: "models/selector.ckpt".into(),
            catalog: "seeds".into(),
            seed_networks: None,
            store: "store".into(),
            synthesizer: SynthesizerKind::Style,
            synthesis: SynthesisConfig::default(),
            synthesis_size: memo_core::image::SYNTHESIS_SIZE,
            extractor_seed: 0,
            max_upload_bytes: 16 << 20,
        }
    }
}

pub const ENV_PORT: &str = "MEMO_PORT";
pub const ENV_SCORER: &str = "MEMO_SCORER";
pub const ENV_SELECTOR: &str = "MEMO_SELECTOR";
pub const ENV_CATALOG: &str = "MEMO_CATALOG";
pub const ENV_SEED_NETWORKS: &str = "MEMO_SEED_NETWORKS";

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, Error> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads `path` (defaults when `None`) and applies environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, Error> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                Self::from_toml(&text)?
            }
            None => Self::default(),
        };
        config.apply_env(|k| std::env::var(k).ok())?;
        Ok(config)
    }

    /// Overrides port and model paths from `lookup` (normally the process
    /// environment).
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), Error> {
        if let Some(port) = lookup(ENV_PORT) {
            self.port = port
                .parse()
                .map_err(|_| Error::Config(format!("{ENV_PORT}={port} is not a port number")))?;
        }
        if let Some(v) = lookup(ENV_SCORER) {
            self.scorer = v;
        }
        if let Some(v) = lookup(ENV_SELECTOR) {
            self.selector = v.into();
        }
        if let Some(v) = lookup(ENV_CATALOG) {
            self.catalog = v.into();
        }
        if let Some(v) = lookup(ENV_SEED_NETWORKS) {
            self.seed_networks = Some(v.into());
        }
        Ok(())
    }
}
