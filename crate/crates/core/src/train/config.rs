use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::nn::NetConfig;
use crate::tensor::kernels::ssim::SsimConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: u32,
    pub base_lr: f64,
    /// Epochs after which the rate is multiplied by `lr_factor`.
    pub milestones: Vec<u32>,
    pub lr_factor: f64,
    pub crop: usize,
    pub batch_size: usize,
    pub loss: LossKind,
    pub seed: u64,
    pub net: NetConfig,
    /// Training-set quality is measured every this many epochs (and at the last).
    pub eval_every: u32,
    /// Number of training pairs in the quality sample.
    pub eval_sample: usize,
    /// A numbered checkpoint is kept every this many epochs; 0 keeps only the latest.
    pub checkpoint_every: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1000,
            base_lr: 5e-4,
            milestones: vec![600, 800],
            lr_factor: 0.1,
            crop: 64,
            batch_size: 8,
            loss: LossKind::NegSsim,
            seed: 0,
            net: NetConfig::default(),
            eval_every: 1,
            eval_sample: 8,
            checkpoint_every: 100,
        }
    }
}

impl TrainConfig {
    /// Milestones at 60% and 80% of `epochs`, keeping the default schedule's shape
    /// for shorter runs.
    pub fn scaled_milestones(epochs: u32) -> Vec<u32> {
        let mut m: Vec<u32> = [6u64, 8]
            .iter()
            .map(|f| (epochs as u64 * f / 10) as u32)
            .filter(|&e| e >= 1 && e < epochs)
            .collect();
        m.dedup();
        m
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor.is_finite()) {
            return bad(format!("lr_factor must be positive, got {}", self.lr_factor));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("milestones {:?} must be strictly increasing", self.milestones));
        }
        if self.milestones.iter().any(|&m| m >= self.epochs) {
            return bad(format!("milestones {:?} must be below epochs = {}", self.milestones, self.epochs));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        self.net.validate()?;
        let m = self.net.size_multiple();
        if self.crop == 0 || !self.crop.is_multiple_of(m) {
            return bad(format!("crop {} must be a positive multiple of {m}", self.crop));
        }
        if self.loss == LossKind::NegSsim && self.crop < SsimConfig::default().window {
            return bad(format!("crop {} is smaller than the SSIM window", self.crop));
        }
        Ok(())
    }
}

/// Learning rate of a 1-based epoch: piecewise constant, multiplied by `lr_factor`
/// once for every milestone the epoch is past.
pub fn lr_at(epoch: u32, cfg: &TrainConfig) -> Result<f64> {
    if epoch == 0 || epoch > cfg.epochs {
        return Err(Error::InvalidArgument(format!("epoch {epoch} outside 1..={}", cfg.epochs)));
    }
    let drops = cfg.milestones.iter().filter(|&&m| epoch > m).count();
    Ok((0..drops).fold(cfg.base_lr, |lr, _| lr * cfg.lr_factor))
}
