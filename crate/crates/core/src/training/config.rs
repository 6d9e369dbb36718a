use serde::{Deserialize, Serialize};

use crate::losses::LossWeights;
use crate::model::{ArchConfig, GanMode, Variant};
use crate::{Error, Result};

/// Everything that determines a training run besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "camelCase", deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    /// Discriminator updates per encoder update; `None` picks 1 for log-loss
    /// and 5 for WGAN-GP.
    pub d_updates_per_step: Option<usize>,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub gan_mode: GanMode,
    pub loss_weights: LossWeights,
    pub arch: ArchConfig,
    pub variant: Variant,
    /// Oversample the minority class of the training split.
    pub balance: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 32,
            beta1: 0.9,
            beta2: 0.999,
            d_updates_per_step: None,
            patience: 5,
            max_epochs: 100,
            seed: 0,
            gan_mode: GanMode::Log,
            loss_weights: LossWeights::default(),
            arch: ArchConfig::default(),
            variant: Variant::full(),
            balance: true,
        }
    }
}

impl TrainConfig {
    pub fn d_updates(&self) -> usize {
        self.d_updates_per_step.unwrap_or(match self.gan_mode {
            GanMode::Log => 1,
            GanMode::WganGp => 5,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learningRate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size < 2 || self.batch_size % 2 != 0 {
            return Err(Error::Config(format!(
                "batchSize must be even and at least 2, got {}",
                self.batch_size
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("maxEpochs must be at least 1".into()));
        }
        self.loss_weights.validate()?;
        self.arch
            .validate()
            .map_err(|e| Error::Config(format!("arch: {}", strip(e))))?;
        self.variant
            .validate()
            .map_err(|e| Error::Config(format!("variant: {}", strip(e))))?;
        Ok(())
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}
