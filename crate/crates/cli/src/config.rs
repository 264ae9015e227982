use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use apnea_core::feature_extract::{BoundaryPolicy, FeatureSet};
use apnea_core::pipeline::BeatPipeline;
use apnea_core::se_cnn::{ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub n_blocks: usize,
    pub width: usize,
    pub cardinality: usize,
    pub se_reduction: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::new(4);
        Self {
            n_blocks: m.n_blocks,
            width: m.width,
            cardinality: m.cardinality,
            se_reduction: m.se_reduction,
        }
    }
}

impl ModelSection {
    pub fn for_set(&self, set: FeatureSet) -> ModelConfig {
        ModelConfig {
            in_channels: set.n_channels(),
            n_blocks: self.n_blocks,
            width: self.width,
            cardinality: self.cardinality,
            se_reduction: self.se_reduction,
            n_classes: 2,
        }
    }
}

/// Settings shared by every subcommand, read from an optional TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub dataset_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub feature_sets: Vec<FeatureSet>,
    pub boundary: BoundaryPolicy,
    pub beats: BeatPipeline,
    pub model: ModelSection,
    pub train: TrainConfig,
    /// Fraction of training records held out for checkpoint selection.
    pub val_fraction: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            dataset_dir: None,
            output_dir: PathBuf::from("apnea-out"),
            feature_sets: vec![FeatureSet::ROnly, FeatureSet::RAndS],
            boundary: BoundaryPolicy::Drop,
            beats: BeatPipeline::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            val_fraction: 0.2,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let cfg = match path {
            None => Self::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.beats.rr_bounds.validate().context("rr bounds")?;
        // Band limits are re-checked per record against its sampling rate.
        self.beats.filter_spec(100).context("filter band at 100 Hz")?;
        self.train.validate().context("train section")?;
        self.model.for_set(FeatureSet::RAndS).validate().context("model section")?;
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            bail!("val_fraction must be in (0, 1), got {}", self.val_fraction);
        }
        if self.feature_sets.is_empty() {
            bail!("feature_sets must name at least one of \"r\", \"rs\"");
        }
        Ok(())
    }

    pub fn dir(&self, stage: &str) -> PathBuf {
        self.output_dir.join(stage)
    }
}
