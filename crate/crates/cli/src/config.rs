//! Experiment configuration: a TOML file with `[dataset]`, `[partition]`,
//! `[model]`, `[fed]` and `[dp]` sections plus top-level `methods`, `seeds`
//! and `output_dir`. Unknown keys are rejected everywhere; every omitted key
//! takes the default documented on its field.

use std::fmt;
use std::path::{Path, PathBuf};

use fedbio::data::{PartitionScheme, SynthConfig};
use fedbio::fed::{DpConfig, FedConfig};
use fedbio::nn::{scaled_trunk, Head, NnError, SiameseModel};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "attention")]
    Attention,
    #[serde(rename = "fedavg")]
    FedAvg,
    #[serde(rename = "local_only")]
    LocalOnly,
    #[serde(rename = "centralized")]
    Centralized,
    #[serde(rename = "attention_dp")]
    AttentionDp,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Attention,
        Method::FedAvg,
        Method::LocalOnly,
        Method::Centralized,
        Method::AttentionDp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Attention => "attention",
            Method::FedAvg => "fedavg",
            Method::LocalOnly => "local_only",
            Method::Centralized => "centralized",
            Method::AttentionDp => "attention_dp",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Directory of `<subject>_<impression>.pgm` images. Synthetic subjects
    /// are generated when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    /// Side length every image is resized (or rendered) to. Default 128.
    pub image_size: usize,
    /// Fraction of each subject's impressions reserved for evaluation. Default 0.25.
    pub holdout_fraction: f64,
    /// Synthetic subjects. Default 100.
    pub num_subjects: usize,
    /// Synthetic impressions per subject. Default 8.
    pub impressions_per_subject: usize,
    pub noise_level: f64,
    pub max_rotation_deg: f64,
    pub max_shift: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        Self {
            corpus: None,
            image_size: synth.image_size,
            holdout_fraction: 0.25,
            num_subjects: synth.num_subjects,
            impressions_per_subject: synth.impressions_per_subject,
            noise_level: synth.noise_level,
            max_rotation_deg: synth.max_rotation_deg,
            max_shift: synth.max_shift,
        }
    }
}

impl DatasetConfig {
    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            num_subjects: self.num_subjects,
            impressions_per_subject: self.impressions_per_subject,
            image_size: self.image_size,
            noise_level: self.noise_level,
            max_rotation_deg: self.max_rotation_deg,
            max_shift: self.max_shift,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    #[default]
    Contrastive,
    /// Softmax over subject ids; pairs are still scored by embedding distance.
    Classifier,
}

/// Layer widths of the convolutional trunk; defaults are the reference
/// architecture (32, 64, 128, dropout 0.5).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub embedding: usize,
    pub dropout: f64,
    pub head: HeadKind,
    pub margin: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            conv1_filters: 32,
            conv2_filters: 64,
            embedding: 128,
            dropout: 0.5,
            head: HeadKind::Contrastive,
            margin: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn build(&self, image_size: usize, num_subjects: usize) -> Result<SiameseModel, NnError> {
        let head = match self.head {
            HeadKind::Contrastive => Head::Contrastive { margin: self.margin },
            HeadKind::Classifier => Head::Classifier {
                num_classes: num_subjects,
            },
        };
        SiameseModel::new(
            (image_size, image_size),
            scaled_trunk(self.conv1_filters, self.conv2_filters, self.embedding, self.dropout),
            head,
        )
    }
}

fn default_methods() -> Vec<Method> {
    Method::ALL[..4].to_vec()
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Default: every method except `attention_dp`, which needs a `[dp]` section.
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    /// One full paired comparison per seed. Default `[0]`.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub dataset: DatasetConfig,
    /// Default dirichlet with alpha 0.3.
    #[serde(default)]
    pub partition: PartitionScheme,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub fed: FedConfig,
    /// Clip-and-noise settings applied only to `attention_dp`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dp: Option<DpConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            methods: default_methods(),
            seeds: default_seeds(),
            output_dir: default_output_dir(),
            dataset: DatasetConfig::default(),
            partition: PartitionScheme::default(),
            model: ModelConfig::default(),
            fed: FedConfig::default(),
            dp: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot serialize config: {0}")]
    Serialize(String),
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.methods.is_empty() {
            return bad(
                "methods must list at least one of attention, fedavg, local_only, centralized, attention_dp".into(),
            );
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return bad(format!("methods lists {m} twice"));
            }
        }
        if self.seeds.is_empty() {
            return bad("seeds must contain at least one integer".into());
        }
        for (i, s) in self.seeds.iter().enumerate() {
            if self.seeds[..i].contains(s) {
                return bad(format!("seeds lists {s} twice"));
            }
        }
        if self.methods.contains(&Method::AttentionDp) {
            match &self.dp {
                None => {
                    return bad("method attention_dp requires a [dp] section with clip_norm and noise_sigma".into())
                }
                Some(dp) => dp.validate().map_err(|e| ConfigError::Invalid(format!("[dp]: {e}")))?,
            }
        }
        let d = &self.dataset;
        if !(d.holdout_fraction > 0.0 && d.holdout_fraction < 1.0) {
            return bad(format!(
                "dataset.holdout_fraction must lie in (0, 1), got {}",
                d.holdout_fraction
            ));
        }
        if d.image_size == 0 {
            return bad("dataset.image_size must be >= 1".into());
        }
        if d.corpus.is_none() && (d.num_subjects < 2 || d.impressions_per_subject < 2) {
            return bad("dataset.num_subjects and dataset.impressions_per_subject must both be >= 2".into());
        }
        match self.partition {
            PartitionScheme::Dirichlet { alpha } if !(alpha > 0.0 && alpha.is_finite()) => {
                return bad(format!("partition.alpha must be > 0, got {alpha}"));
            }
            PartitionScheme::Shard { shards } if shards < 2 => {
                return bad(format!("partition.shards must be >= 2, got {shards}"));
            }
            _ => {}
        }
        self.fed
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("[fed]: {e}")))?;
        let classes = if d.corpus.is_none() { d.num_subjects } else { 2 };
        self.model
            .build(d.image_size, classes)
            .map_err(|e| ConfigError::Invalid(format!("[model]: {e}")))?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        toml::to_string(self).map_err(|e| ConfigError::Serialize(e.to_string()))
    }

    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Reads, parses and validates a config file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    ExperimentConfig::from_toml(&text, path)
}
