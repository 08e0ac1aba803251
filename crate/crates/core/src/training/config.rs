use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreezePolicy {
    /// Only the final linear classifier trains; the backbone runs in eval mode.
    BackboneFrozen,
    Full,
}

/// Multiply the learning rate by `factor` from `epoch` (1-based) onwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrDrop {
    pub epoch: usize,
    pub factor: f64,
}

/// Training hyperparameters; serialized as the TOML run-config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    #[serde(default)]
    pub lr_drops: Vec<LrDrop>,
    pub weight_decay: f64,
    /// Nesterov momentum coefficient.
    pub momentum: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub freeze_policy: FreezePolicy,
    #[serde(default)]
    pub seed: u64,
}

fn default_batch_size() -> usize {
    32
}

impl TrainConfig {
    /// 100 epochs of SGD at 0.1 with ×0.1 drops at epochs 40 and 80,
    /// weight decay 5e-4 and Nesterov momentum 0.9, classifier-only.
    pub fn standard() -> Self {
        TrainConfig {
            epochs: 100,
            base_lr: 0.1,
            lr_drops: vec![LrDrop { epoch: 40, factor: 0.1 }, LrDrop { epoch: 80, factor: 0.1 }],
            weight_decay: 5e-4,
            momentum: 0.9,
            batch_size: default_batch_size(),
            freeze_policy: FreezePolicy::BackboneFrozen,
            seed: 0,
        }
    }

    /// The standard recipe compressed to `epochs`, drops kept at 40% and 80%
    /// of the run, training every parameter.
    pub fn from_scratch(epochs: usize) -> Self {
        let at = |frac: f64| ((epochs as f64 * frac).round() as usize).max(1);
        let mut lr_drops = vec![LrDrop { epoch: at(0.4), factor: 0.1 }, LrDrop { epoch: at(0.8), factor: 0.1 }];
        lr_drops.retain(|d| d.epoch < epochs);
        lr_drops.dedup_by_key(|d| d.epoch);
        TrainConfig {
            epochs,
            lr_drops,
            freeze_policy: FreezePolicy::Full,
            ..Self::standard()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::TrainConfig(m));
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return fail(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        for (i, d) in self.lr_drops.iter().enumerate() {
            if !(d.factor > 0.0 && d.factor.is_finite()) {
                return fail(format!("lr drop at epoch {} has factor {}", d.epoch, d.factor));
            }
            if d.epoch >= self.epochs && self.epochs > 0 {
                return fail(format!("lr drop at epoch {} is not before the last epoch {}", d.epoch, self.epochs));
            }
            if i > 0 && d.epoch <= self.lr_drops[i - 1].epoch {
                return fail(format!("lr drop epochs must be strictly increasing: {:?}", self.lr_drops));
            }
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (1-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr_drops
            .iter()
            .filter(|d| d.epoch <= epoch)
            .fold(self.base_lr, |lr, d| lr * d.factor)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::TrainConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("train config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}
