use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::ClassifierConfig;
use crate::embeddings::SkipgramConfig;
use crate::epi::ProbeConfig;
use crate::error::{Error, Result};
use crate::sampler::Scheme;
use crate::seq2seq::{PretrainConfig, TrainConfig};
use crate::text::{DEFAULT_MAX_LEN, DEFAULT_MIN_FREQ};

pub const DEFAULT_RUN_TOML: &str = include_str!("../../configs/run.toml");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Every artifact lives under this directory.
    pub work_dir: PathBuf,
    /// Input record CSV; `synth-data` writes `<work_dir>/corpus.csv` when unset.
    pub data: Option<PathBuf>,
    /// Schema TOML; the built-in emergency-department schema when unset.
    pub schema: Option<PathBuf>,
    /// Generator TOML; the built-in toy generator when unset.
    pub generator: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            work_dir: PathBuf::from("run"),
            data: None,
            schema: None,
            generator: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Overrides the generator's corpus size.
    pub size: Option<usize>,
    pub min_freq: u64,
    pub max_len: usize,
    pub train_frac: f64,
    /// Validation pairs held back as the generation/evaluation set.
    pub test_size: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            size: None,
            min_freq: DEFAULT_MIN_FREQ,
            max_len: DEFAULT_MAX_LEN,
            train_frac: 0.75,
            test_size: 50_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    /// Warm-start the encoder from `pretrain-encoder`.
    pub pretrained_encoder: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            pretrained_encoder: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSettings {
    /// Schemes run by `generate` without `--scheme` and scored by `evaluate`.
    pub schemes: Vec<Scheme>,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self {
            schemes: Scheme::default_sweep(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EsSource {
    Skipgram,
    Decoder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSettings {
    /// Word vectors behind the ES metric.
    pub es_source: EsSource,
    pub skipgram: SkipgramConfig,
}

impl Default for EmbeddingSettings {
    fn default() -> Self {
        Self {
            es_source: EsSource::Skipgram,
            skipgram: SkipgramConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NamesConfig {
    pub k: usize,
    /// Starting names when `names.txt` does not exist yet.
    pub seeds: Vec<String>,
}

impl Default for NamesConfig {
    fn default() -> Self {
        Self {
            k: 100,
            seeds: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub train: TrainConfig,
    pub sampler: SamplerSettings,
    pub embeddings: EmbeddingSettings,
    pub classifier: ClassifierConfig,
    pub names: NamesConfig,
    pub epi: ProbeConfig,
}

/// Per-stage seed offsets, so stages draw independent streams from one
/// global seed.
#[derive(Clone, Copy, Debug)]
pub enum Stage {
    Synth,
    Split,
    Pretrain,
    Init,
    Train,
    Sample,
    Skipgram,
    Classifier,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config; relative paths inside it resolve against the
    /// config file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.paths.work_dir);
        for p in [
            &mut cfg.paths.data,
            &mut cfg.paths.schema,
            &mut cfg.paths.generator,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.data.train_frac > 0.0 && self.data.train_frac < 1.0) {
            return bad(format!(
                "data.train_frac {} must lie in (0, 1)",
                self.data.train_frac
            ));
        }
        if self.data.max_len == 0 || self.data.test_size == 0 {
            return bad("data.max_len and data.test_size must be positive".into());
        }
        if self.model.hidden == 0 {
            return bad("model.hidden must be positive".into());
        }
        if self.train.batch_size == 0 || self.train.max_epochs == 0 || !(self.train.lr > 0.0) {
            return bad("train.batch_size, train.max_epochs and train.lr must be positive".into());
        }
        if self.classifier.batch_size == 0
            || self.classifier.max_epochs == 0
            || !(self.classifier.lr > 0.0)
        {
            return bad(
                "classifier.batch_size, classifier.max_epochs and classifier.lr must be positive"
                    .into(),
            );
        }
        if self.sampler.schemes.is_empty() {
            return bad("sampler.schemes must list at least one scheme".into());
        }
        for s in &self.sampler.schemes {
            s.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.names.k == 0 {
            return bad("names.k must be positive".into());
        }
        if !(self.epi.threshold >= 0.0) {
            return bad("epi.threshold must be non-negative".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the parsed config. The work
    /// directory is left out: where a run is written does not change it.
    pub fn fingerprint(&self) -> String {
        let mut canon = self.clone();
        canon.paths.work_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&canon).expect("config serializes");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn stage_seed(&self, stage: Stage) -> u64 {
        self.seed
            .wrapping_mul(1_000_003)
            .wrapping_add(stage as u64 * 7919 + 1)
    }
}
