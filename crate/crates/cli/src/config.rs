use std::path::{Path, PathBuf};

use anyhow::Context;
use memo_core::SynthesisConfig;
use memo_service::{ServiceConfig, SynthesizerKind};
use serde::Deserialize;

/// Default paths and settings, read from `memo.toml` or `--config`.
///
/// Command-line flags override these. The `[service]` table is passed to
/// `serve` unchanged.
#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    /// Size every image is decoded to before synthesis and scoring.
    pub image_size: (usize, usize),
    pub scorer: String,
    pub external_scorer: String,
    pub catalog: PathBuf,
    pub selector: PathBuf,
    pub seed_networks: Option<PathBuf>,
    pub synthesizer: SynthesizerKind,
    pub synthesis: SynthesisConfig,
    pub extractor_seed: u64,
    pub service: ServiceConfig,
}

impl Default for CliConfig {
    fn default() -> Self {
        let service = ServiceConfig::default();
        Self {
            image_size: service.synthesis_size,
            scorer: service.scorer.clone(),
            external_scorer: "models/scorer-e.ckpt".into(),
            catalog: service.catalog.clone(),
            selector: service.selector.clone(),
            seed_networks: None,
            synthesizer: SynthesizerKind::Style,
            synthesis: SynthesisConfig::default(),
            extractor_seed: 0,
            service,
        }
    }
}

pub const DEFAULT_CONFIG: &str = "memo.toml";

impl CliConfig {
    /// An explicit path must exist; the default file is optional.
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let (path, required) = match path {
            Some(p) => (p.to_path_buf(), true),
            None => (PathBuf::from(DEFAULT_CONFIG), false),
        };
        if !required && !path.exists() {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let c: CliConfig = toml::from_str("image_size = [32, 32]\nsynthesizer = \"brightness\"\n[service]\nport = 9100\n").unwrap();
        assert_eq!(c.image_size, (32, 32));
        assert_eq!(c.synthesizer, SynthesizerKind::Brightness);
        assert_eq!(c.service.port, 9100);
        assert_eq!(c.scorer, CliConfig::default().scorer);
        assert!(toml::from_str::<CliConfig>("nope = 1").is_err());
    }
}
