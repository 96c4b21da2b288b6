//! Experiment configuration: one serializable record with every knob.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::appearance::{ConstraintParams, CrfParams, Stage2Weights};
use crate::error::{Error, Result};
use crate::net::NetConfig;
use crate::synth::{DatasetKind, DatasetSpec};

/// Where training clips come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset directory. When unset, clips are generated from `synthetic`.
    pub path: Option<PathBuf>,
    pub synthetic: DatasetSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            path: None,
            synthetic: DatasetSpec::new(DatasetKind::Rigid, 8),
        }
    }
}

/// Optimizer and schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub stage1_iters: usize,
    pub stage2_iters: usize,
    /// Frame pairs per batch.
    pub batch_size: usize,
    pub lr: f64,
    /// Polynomial decay power.
    pub poly_power: f64,
    pub min_lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Overrides the stage-2 learning rate; by default stage 2 continues the
    /// polynomial schedule laid over both stages.
    pub stage2_lr: Option<f64>,
    /// Amplitude of per-pair brightness and contrast jitter.
    pub jitter: f64,
    /// Train on forward flow only even when backward flow is available.
    pub forward_only: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage1_iters: 2000,
            stage2_iters: 100,
            batch_size: 8,
            lr: 1e-3,
            poly_power: 0.9,
            min_lr: 1e-6,
            weight_decay: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            stage2_lr: None,
            jitter: 0.05,
            forward_only: false,
        }
    }
}

/// Frozen auxiliary feature provider.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuxProvider {
    None,
    ColorStatistics,
}

/// Pipeline switches not covered by the network config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationFlags {
    pub semantic_constraint: bool,
    pub post_crf: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags {
            semantic_constraint: true,
            post_crf: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TunerConfig {
    pub first_frame_only: bool,
    /// Frames per clip scored when `first_frame_only` is off (all if unset).
    pub frames_per_clip: Option<usize>,
    pub threshold: f64,
}

impl Default for TunerConfig {
    fn default() -> Self {
        TunerConfig {
            first_frame_only: true,
            frames_per_clip: None,
            threshold: 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub losses: Stage2Weights,
    pub crf: CrfParams,
    pub constraint: ConstraintParams,
    pub flags: AblationFlags,
    pub aux: AuxProvider,
    pub tuner: TunerConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            data: DataConfig::default(),
            net: NetConfig::default(),
            train: TrainConfig::default(),
            losses: Stage2Weights::default(),
            crf: CrfParams::default(),
            constraint: ConstraintParams::default(),
            flags: AblationFlags::default(),
            aux: AuxProvider::ColorStatistics,
            tuner: TunerConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Full-scale schedule: 40k/200 iterations, learning rate 1e-4, 16 pairs.
    pub fn paper_scale() -> Self {
        let mut c = ExperimentConfig::default();
        c.train.stage1_iters = 40_000;
        c.train.stage2_iters = 200;
        c.train.lr = 1e-4;
        c.train.batch_size = 16;
        c
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.net.num_channels < 2 {
            return bad(format!("need at least 2 mask channels, got {}", self.net.num_channels));
        }
        if !(self.net.lambda > 0.0) {
            return bad(format!("lambda must be positive, got {}", self.net.lambda));
        }
        if !(self.losses.appearance >= 0.0 && self.losses.motion >= 0.0) {
            return bad("loss weights must be nonnegative".into());
        }
        if self.train.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(self.train.lr > 0.0) || self.train.min_lr < 0.0 || self.train.weight_decay < 0.0 {
            return bad("learning rates and weight decay must be nonnegative".into());
        }
        if self.flags.semantic_constraint && self.aux == AuxProvider::None {
            return bad("semantic constraint enabled but no auxiliary feature provider configured".into());
        }
        if self.constraint.dilation % 2 == 0 {
            return bad(format!("dilation size must be odd, got {}", self.constraint.dilation));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let c: ExperimentConfig = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_toml_string()?).map_err(|e| Error::io(path, e))
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
