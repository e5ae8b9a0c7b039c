use serde::{Deserialize, Serialize};

use crate::dclan::DclanConfig;
use crate::error::{Error, Result};
use crate::refspaces::Space;
use crate::train::optim::AdamConfig;

/// Everything that determines a training run. Absent JSON fields take the
/// defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Initial learning rate.
    pub lr: f64,
    pub betas: [f64; 2],
    pub eps: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Epochs at which the learning rate is multiplied by `gamma`.
    pub milestones: Vec<usize>,
    pub gamma: f64,
    /// Side of the square training crops.
    pub crop: usize,
    pub batch: usize,
    pub seed: u64,
    pub w_rgb: f64,
    pub w_lhsi: f64,
    /// Global gradient-norm limit; `null` disables clipping.
    pub grad_clip: Option<f64>,
    /// Color space the network operates in.
    pub space: Space,
    /// Longer side of the working resolution used for whole-image
    /// correction; 0 runs at the native size.
    pub net_size: usize,
    /// Validate every this many epochs (the first and last epoch always are).
    pub val_every: usize,
    /// Images held out for validation when training from a manifest.
    pub val_count: usize,
    pub arch: DclanConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            betas: [0.9, 0.99],
            eps: 1e-8,
            weight_decay: 0.0,
            epochs: 120,
            milestones: vec![40, 70, 90, 110],
            gamma: 0.5,
            crop: 16,
            batch: 4,
            seed: 0,
            w_rgb: 0.9,
            w_lhsi: 0.1,
            grad_clip: Some(1.0),
            space: Space::Lhsi,
            net_size: 32,
            val_every: 1,
            val_count: 8,
            arch: DclanConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.betas[0],
            beta2: self.betas[1],
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.betas.iter().any(|b| !(0.0..1.0).contains(b)) || !(self.eps > 0.0) {
            return bad("betas must lie in [0, 1) and eps must be positive".into());
        }
        if self.weight_decay < 0.0 || !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("weight_decay must be >= 0 and gamma in (0, 1]".into());
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("milestones {:?} must be strictly increasing", self.milestones));
        }
        if self.w_rgb < 0.0 || self.w_lhsi < 0.0 || (self.w_rgb + self.w_lhsi - 1.0).abs() > 1e-12 {
            return bad(format!("loss weights {} + {} must be nonnegative and sum to 1", self.w_rgb, self.w_lhsi));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad(format!("grad_clip must be positive, got {c}"));
            }
        }
        if self.batch == 0 || self.val_every == 0 {
            return bad("batch and val_every must be positive".into());
        }
        self.arch.validate()?;
        let d = self.arch.divisor();
        if self.crop == 0 || self.crop % d != 0 {
            return bad(format!("crop {} must be a positive multiple of {d}", self.crop));
        }
        Ok(())
    }

    /// Learning rate for 0-based `epoch`: `lr * gamma^(milestones <= epoch)`.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.lr * self.gamma.powi(passed as i32)
    }
}
