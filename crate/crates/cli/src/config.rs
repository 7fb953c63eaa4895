//! The run configuration document (TOML).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sweepseg::infer::{check_confidence, InferConfig};
use sweepseg::net::NetConfig;
use sweepseg::synth::SynthConfig;
use sweepseg::trainer::{SamplerConfig, TrainConfig};

use crate::Usage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// When set, replaces `synth.seed` and `train.seed`.
    pub seed: Option<u64>,
    pub paths: Paths,
    pub corpus: Corpus,
    pub synth: SynthConfig,
    pub train: TrainSection,
    pub infer: InferConfig,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            paths: Paths::default(),
            corpus: Corpus::default(),
            synth: SynthConfig::default(),
            train: TrainSection::default(),
            infer: InferConfig::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Output directory of `pipeline`, relative to the config file.
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self { out_dir: "run".into() }
    }
}

/// Clean plates built from the `synth` section with its defects and steps removed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Corpus {
    pub train_thickness_mm: Vec<f64>,
    pub val_thickness_mm: Vec<f64>,
    pub test_thickness_mm: Vec<f64>,
}

impl Default for Corpus {
    fn default() -> Self {
        Self {
            train_thickness_mm: vec![3.5, 4.5, 5.5],
            val_thickness_mm: vec![5.0],
            test_thickness_mm: vec![4.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub val_stride: usize,
    pub test_stride: usize,
    /// Strides compared by `stride-study`.
    pub strides: Vec<usize>,
    pub repeats: usize,
    pub sampler: SamplerConfig,
    pub net: NetConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            patience: t.patience,
            max_epochs: t.max_epochs,
            seed: t.seed,
            val_stride: t.val_stride,
            test_stride: t.test_stride,
            strides: vec![8, 16, 32, 64, 128, 256],
            repeats: 1,
            sampler: SamplerConfig::default(),
            net: NetConfig::default(),
        }
    }
}

impl TrainSection {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            patience: self.patience,
            max_epochs: self.max_epochs,
            seed: self.seed,
            val_stride: self.val_stride,
            test_stride: self.test_stride,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Confidences `pipeline` runs inference and evaluation at.
    pub confidences: Vec<f64>,
    /// Write and score the forward, backward and combined masks too.
    pub stages: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            confidences: vec![0.99, 0.999, 0.9999, 0.99999, 0.999999, 0.9999999],
            stages: true,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, Usage> {
        let de = toml::Deserializer::parse(text).map_err(|e| Usage(format!("config: {e}")))?;
        let mut cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Usage(format!("invalid config at `{path}`: {}", e.into_inner().message()))
        })?;
        cfg.apply_seed();
        Ok(cfg)
    }

    /// Loads a config and resolves `paths.out_dir` against the file's directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if cfg.paths.out_dir.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            cfg.paths.out_dir = base.join(&cfg.paths.out_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `path` if given, otherwise the defaults.
    pub fn load_or_default(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.apply_seed();
    }

    fn apply_seed(&mut self) {
        if let Some(s) = self.seed {
            self.synth.seed = s;
            self.train.seed = s;
        }
    }

    pub fn validate(&self) -> sweepseg::Result<()> {
        self.synth.validate()?;
        for (key, list) in [
            ("train_thickness_mm", &self.corpus.train_thickness_mm),
            ("val_thickness_mm", &self.corpus.val_thickness_mm),
            ("test_thickness_mm", &self.corpus.test_thickness_mm),
        ] {
            for (i, &t) in list.iter().enumerate() {
                if !(t.is_finite() && t > 0.0) {
                    return Err(config_err(format!("corpus.{key}[{i}]"), "must be positive"));
                }
            }
        }
        self.train.train_config().validate()?;
        self.train.sampler.validate()?;
        self.train.net.validate()?;
        if self.train.sampler.window != self.train.net.window {
            return Err(config_err("train.sampler.window", "must equal train.net.window"));
        }
        if self.train.repeats < 1 {
            return Err(config_err("train.repeats", "must be >= 1"));
        }
        for (i, &s) in self.train.strides.iter().enumerate() {
            if s < 1 {
                return Err(config_err(format!("train.strides[{i}]"), "must be >= 1"));
            }
        }
        self.infer.validate()?;
        for (i, &c) in self.eval.confidences.iter().enumerate() {
            check_confidence(c).map_err(|e| config_err(format!("eval.confidences[{i}]"), e.to_string()))?;
        }
        Ok(())
    }

    /// A defect-free plate of thickness `t` on the synth section's grid.
    pub fn clean_plate(&self, thickness_mm: f64, seed: u64) -> SynthConfig {
        SynthConfig {
            thickness_mm,
            steps: vec![],
            defects: vec![],
            seed,
            ..self.synth.clone()
        }
    }
}

fn config_err(path: impl Into<String>, msg: impl Into<String>) -> sweepseg::Error {
    sweepseg::Error::Config {
        path: path.into(),
        msg: msg.into(),
    }
}
