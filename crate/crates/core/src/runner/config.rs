//! Declarative experiment configuration (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detector::DetectorConfig;
use crate::embedding::DEFAULT_BACKBONE;
use crate::error::{Error, Result};
use crate::matchers::ClassifierHyper;
use crate::recon::{TrainHyper, UNetConfig};

/// Largest seed a TOML file can carry.
pub const MAX_SEED: u64 = i64::MAX as u64;

/// A face corpus: rendered synthetically, or an existing manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub id: String,
    pub identities: usize,
    pub images_per_identity: usize,
    pub seed: u64,
    /// Use this manifest instead of rendering.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            id: "synthetic-eval".into(),
            identities: 20,
            images_per_identity: 12,
            seed: 1,
            manifest: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    pub split: u64,
    pub filter: u64,
    pub train: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds { split: 11, filter: 7, train: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconConfig {
    /// Pair corpus; must not share an id with the evaluation corpus.
    pub corpus: CorpusConfig,
    pub unet: UNetConfig,
    pub train: TrainHyper,
    /// Load this checkpoint instead of training.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig {
            corpus: CorpusConfig {
                id: "synthetic-recon".into(),
                identities: 40,
                images_per_identity: 8,
                seed: 100,
                manifest: None,
            },
            unet: UNetConfig {
                input_size: 64,
                depth: 3,
                base_channels: 8,
            },
            train: TrainHyper {
                batch: 4,
                lr: 3e-3,
                epochs: 20,
                seed: 4,
            },
            checkpoint: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub corpus: CorpusConfig,
    pub seeds: Seeds,
    /// Train fraction per identity.
    pub split_ratio: f64,
    /// Identities with fewer images are dropped from the source corpus.
    pub min_images: usize,
    /// Unseen identities for open-set runs; default `round(58/158 * n)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub held_out: Option<usize>,
    pub detector: DetectorConfig,
    pub backbone: String,
    /// AR asset PNGs; the built-in sprites when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub assets_dir: Option<PathBuf>,
    pub classifier: ClassifierHyper,
    pub recon: ReconConfig,
    pub tsne: TsneConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            corpus: CorpusConfig::default(),
            seeds: Seeds::default(),
            split_ratio: 0.8,
            min_images: 10,
            held_out: None,
            detector: DetectorConfig::default(),
            backbone: DEFAULT_BACKBONE.into(),
            assets_dir: None,
            classifier: ClassifierHyper::default(),
            recon: ReconConfig::default(),
            tsne: TsneConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Panics on seeds above [`MAX_SEED`]; `validate` rejects those.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let seeds = [
            self.seeds.split,
            self.seeds.filter,
            self.seeds.train,
            self.corpus.seed,
            self.recon.corpus.seed,
            self.recon.train.seed,
        ];
        if let Some(s) = seeds.iter().find(|s| **s > MAX_SEED) {
            return Err(Error::Config(format!("seed {s} exceeds the TOML integer range")));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Config(format!("split_ratio {} is outside (0, 1)", self.split_ratio)));
        }
        if self.corpus.id == self.recon.corpus.id {
            return Err(Error::Config(format!(
                "evaluation and reconstruction corpora share the id `{}`",
                self.corpus.id
            )));
        }
        if self.tsne.perplexity <= 0.0 {
            return Err(Error::Config("t-SNE perplexity must be positive".into()));
        }
        self.recon.unet.validate()
    }

    /// Replaces every seed with `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seeds = Seeds { split: seed, filter: seed, train: seed };
        self
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        format!("{digest:x}")[..16].to_string()
    }

    /// Held-out identity count for `n` identities.
    pub fn held_out_for(&self, n: usize) -> usize {
        self.held_out.unwrap_or_else(|| ((58.0 / 158.0) * n as f64).round() as usize)
    }
}
