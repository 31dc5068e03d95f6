//! Single-document JSON pipeline configuration. Every field has a default;
//! unknown fields are rejected so a typo cannot silently fall back.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::SynthConfig;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::loss::LossConfig;
use crate::model::{AblationFlags, ModelConfig, ModelOptions};
use crate::motion::MotionConfig;
use crate::nn::layers::NetConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub detections: PathBuf,
    pub embeddings: PathBuf,
    pub vocabulary: PathBuf,
    pub gt_graph: PathBuf,
    pub checkpoint: PathBuf,
    pub predictions: PathBuf,
    pub report: PathBuf,
    pub train_log: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            detections: "data/detections.jsonl".into(),
            embeddings: "data/embeddings.bin".into(),
            vocabulary: "data/vocabulary.json".into(),
            gt_graph: "data/gt_graph.jsonl".into(),
            checkpoint: "out/model.ckpt".into(),
            predictions: "out/predictions.jsonl".into(),
            report: "out/report.json".into(),
            train_log: "out/train_log.json".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 25,
            lr: 0.03,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub net: NetConfig,
    pub motion: MotionConfig,
    pub loss: LossConfig,
    pub eval: EvalConfig,
    pub synth: SynthConfig,
    pub ablation: AblationFlags,
    pub model: ModelOptions,
    pub train: TrainConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.motion.validate()?;
        self.loss.validate()?;
        self.eval.validate()?;
        self.synth.validate()?;
        self.ablation.validate()?;
        self.train.validate()?;
        if self.synth.feature_dim != self.net.visual_dim {
            return Err(Error::Config(format!(
                "synth.feature_dim {} differs from net.visual_dim {}",
                self.synth.feature_dim, self.net.visual_dim
            )));
        }
        if self.synth.embed_dim != self.net.dim {
            return Err(Error::Config(format!(
                "synth.embed_dim {} differs from net.dim {}",
                self.synth.embed_dim, self.net.dim
            )));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("bad config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    /// The subset of the config a checkpoint must agree on.
    pub fn model_config(&self, num_predicates: usize, num_object_categories: usize) -> ModelConfig {
        ModelConfig {
            net: self.net.clone(),
            motion: self.motion,
            ablation: self.ablation,
            options: self.model.clone(),
            num_predicates,
            num_object_categories,
        }
    }
}
