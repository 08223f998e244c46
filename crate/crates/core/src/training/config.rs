use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::maskgen::MaskPolicy;
use crate::networks::ModelConfig;

use super::schedule::LrSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Stage1,
    Stage2,
    Joint,
    /// Training of the tiny segmenter on ground-truth labels.
    Segmenter,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Stage1 => "stage1",
            Phase::Stage2 => "stage2",
            Phase::Joint => "joint",
            Phase::Segmenter => "segmenter",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> candle_core::DType {
        match self {
            Precision::F32 => candle_core::DType::F32,
            Precision::F64 => candle_core::DType::F64,
        }
    }
}

fn default_batch() -> usize {
    1
}
fn default_beta2() -> f64 {
    0.9
}
fn default_lr() -> f64 {
    2e-4
}
fn default_plateau() -> u64 {
    2_000
}
fn default_total() -> u64 {
    4_000
}
fn default_hole() -> f64 {
    1.0
}
fn default_every() -> u64 {
    1_000
}

/// Training configuration; the TOML keys are the field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub phase: Phase,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_plateau")]
    pub plateau_iters: u64,
    #[serde(default = "default_total")]
    pub total_iters: u64,
    #[serde(default)]
    pub seed: u64,
    /// Dataset directory (see [`crate::dataset`]).
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    /// Only the first `train_count` samples are used, when set.
    #[serde(default)]
    pub train_count: Option<usize>,
    /// Checkpoints and the loss log are written here, when set.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Checkpoint the phase starts from: stage 1 for `stage2`, stage 2 for `joint`.
    #[serde(default)]
    pub init_checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub weights: LossWeights,
    /// Weight of the extra L1 term over damaged pixels.
    #[serde(default = "default_hole")]
    pub hole_l1_weight: f64,
    #[serde(default)]
    pub masks: MaskPolicy,
    #[serde(default = "default_every")]
    pub checkpoint_every: u64,
    #[serde(default)]
    pub precision: Precision,
    /// Network shapes; defaults to the desk configuration at the dataset size.
    #[serde(default)]
    pub model: Option<ModelConfig>,
}

impl TrainConfig {
    pub fn new(phase: Phase) -> Self {
        Self {
            phase,
            batch_size: default_batch(),
            beta1: 0.0,
            beta2: default_beta2(),
            lr: default_lr(),
            plateau_iters: default_plateau(),
            total_iters: default_total(),
            seed: 0,
            dataset: None,
            train_count: None,
            out_dir: None,
            init_checkpoint: None,
            weights: LossWeights::default(),
            hole_l1_weight: default_hole(),
            masks: MaskPolicy::default(),
            checkpoint_every: default_every(),
            precision: Precision::default(),
            model: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn schedule(&self) -> Result<LrSchedule> {
        LrSchedule::new(self.lr, self.plateau_iters, self.total_iters)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        self.schedule()?;
        for (name, v) in [
            ("weights.rec", self.weights.rec),
            ("weights.per", self.weights.per),
            ("weights.adv", self.weights.adv),
            ("hole_l1_weight", self.hole_l1_weight),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be a nonnegative number, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("beta1 and beta2 must lie in [0, 1)".into()));
        }
        if let Some(m) = &self.model {
            m.validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_from_minimal_toml() {
        let cfg = TrainConfig::from_toml("phase = \"stage1\"").unwrap();
        assert_eq!(cfg, TrainConfig::new(Phase::Stage1));
        assert_eq!((cfg.beta1, cfg.beta2, cfg.lr), (0.0, 0.9, 2e-4));
        assert_eq!(cfg.batch_size, 1);
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = TrainConfig::new(Phase::Joint);
        cfg.model = Some(ModelConfig::desk(32, 32, 5));
        cfg.masks = MaskPolicy::Center { hole: 16 };
        cfg.out_dir = Some("runs/x".into());
        let back = TrainConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        assert!(matches!(
            TrainConfig::from_toml("phase = \"stage1\"\nplateau_iters = 10\ntotal_iters = 5"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            TrainConfig::from_toml("phase = \"stage1\"\nbatch_size = 0"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            TrainConfig::from_toml("phase = \"stage1\"\nbogus = 1"),
            Err(Error::Config(_))
        ));
    }
}
