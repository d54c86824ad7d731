use serde::{Deserialize, Serialize};

use super::augment::AugmentRecipe;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Epochs at which the learning rate is multiplied by `decay`.
    pub milestones: Vec<usize>,
    pub decay: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Augmentation recipe id.
    pub augment: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 64,
            lr: 0.01,
            milestones: vec![15, 25],
            decay: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            augment: "desk".into(),
        }
    }
}

pub const TRAIN_PRESETS: [&str; 4] = ["desk", "cifar", "tiny", "imagenet"];

impl TrainConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let full_scale = |augment: &str| TrainConfig {
            epochs: 250,
            batch_size: 128,
            lr: 0.01,
            milestones: vec![100, 150, 200],
            decay: 0.1,
            momentum: 0.9,
            weight_decay: 5e-3,
            seed: 0,
            augment: augment.into(),
        };
        match name {
            "desk" => Ok(TrainConfig::default()),
            "cifar" => Ok(full_scale("cifar")),
            "tiny" | "imagenet" => Ok(full_scale("tiny")),
            other => Err(Error::Config(format!("unknown training preset {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return fail("epochs and batch size must be positive".into());
        }
        // lr = 0 is accepted: it turns training into a statistics-only pass
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return fail(format!(
                "learning rate {} must be finite and non-negative",
                self.lr
            ));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return fail(format!("decay {} must lie in (0, 1]", self.decay));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum {} must lie in [0, 1)", self.momentum));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return fail(format!(
                "weight decay {} must be non-negative",
                self.weight_decay
            ));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return fail(format!(
                "milestones {:?} must be strictly increasing",
                self.milestones
            ));
        }
        if self.milestones.last().is_some_and(|&m| m >= self.epochs) {
            return fail(format!(
                "milestones {:?} must precede epoch {}",
                self.milestones, self.epochs
            ));
        }
        AugmentRecipe::by_id(&self.augment)?;
        Ok(())
    }
}

/// `lr · decay^(number of milestones <= epoch)`
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let passed = cfg.milestones.iter().filter(|&&m| m <= epoch).count();
    cfg.lr * cfg.decay.powi(passed as i32)
}
