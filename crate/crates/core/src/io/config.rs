use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::{AdamConfig, BetaSchedule, DiffusionSchedule, LossKind};
use crate::error::{Error, Result};
use crate::metrics::AkldConfig;
use crate::model::ModelConfig;
use crate::samplers::{SamplerKind, SamplerPlan};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    /// 200 linear steps. The low end is kept fine so that weak noise is
    /// resolved by several steps; ᾱ_200 ≈ 6.5e-3.
    fn default() -> Self {
        ScheduleConfig {
            steps: 200,
            beta_start: 1e-4,
            beta_end: 0.05,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::new(BetaSchedule::Linear, self.steps, self.beta_start, self.beta_end)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    /// Micro-batches whose gradients are averaged per update.
    pub accumulation: usize,
    pub batch_size: usize,
    /// Side of the square random crops used for training.
    pub crop: usize,
    pub iterations: u64,
    pub ema_decay: f64,
    pub loss: LossKind,
    /// Checkpoint interval in updates; 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            accumulation: 2,
            batch_size: 16,
            crop: 16,
            iterations: 2000,
            ema_decay: 0.995,
            loss: LossKind::SquaredMean,
            checkpoint_every: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub steps: usize,
    pub r: f64,
    /// Truncation start for the distilled jump.
    pub truncation: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            kind: SamplerKind::DipsBasic,
            steps: 10,
            r: 5.0,
            truncation: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub iterations: u64,
    pub adam: AdamConfig,
    pub batch_size: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            iterations: 500,
            adam: AdamConfig {
                lr: 1e-4,
                ..Default::default()
            },
            batch_size: 8,
        }
    }
}

/// Every tunable of a run, loadable from JSON with per-field defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub schedule: ScheduleConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
    pub distill: DistillConfig,
    pub metrics: AkldConfig,
    pub seed: u64,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.build()?;
        self.model.validate()?;
        self.metrics.validate()?;
        let t = &self.train;
        if t.accumulation == 0 || t.batch_size == 0 || t.crop == 0 {
            return Err(Error::InvalidArgument("train counts must be positive".into()));
        }
        if t.crop % 4 != 0 {
            return Err(Error::InvalidArgument(format!("crop must be a multiple of 4, got {}", t.crop)));
        }
        if !(0.0..=1.0).contains(&t.ema_decay) {
            return Err(Error::InvalidArgument(format!("ema_decay {} outside [0, 1]", t.ema_decay)));
        }
        if !(t.adam.lr > 0.0) || !(self.distill.adam.lr > 0.0) {
            return Err(Error::InvalidArgument("learning rates must be positive".into()));
        }
        if self.distill.batch_size == 0 {
            return Err(Error::InvalidArgument("distill batch size must be positive".into()));
        }
        self.plan(self.sampler.kind)?;
        Ok(())
    }

    /// The configured plan for `kind`.
    pub fn plan(&self, kind: SamplerKind) -> Result<SamplerPlan> {
        let s = &self.sampler;
        SamplerPlan::build(kind, self.schedule.steps, s.steps, s.r, s.truncation)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.into()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::Malformed {
            what: "run config",
            path: path.into(),
            detail: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }
}
