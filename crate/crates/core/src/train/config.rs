use log::warn;
use serde::{Deserialize, Serialize};

use crate::embedding::DimensionSchedule;
use crate::error::{Error, Result};
use crate::eval::DEFAULT_K;
use crate::model::{ModelSpec, Variant};

/// Which parameters the L2 term covers on each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum L2Scope {
    /// Rows touched by the batch.
    #[default]
    Batch,
    /// Every parameter.
    Full,
}

/// Known datasets with published hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    AmazonBook,
    LastFm,
    AlibabaIfashion,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "amazon-book" => Ok(Preset::AmazonBook),
            "last-fm" => Ok(Preset::LastFm),
            "alibaba-ifashion" => Ok(Preset::AlibabaIfashion),
            other => Err(Error::Config(format!(
                "unknown preset {other:?} (expected amazon-book, last-fm or alibaba-ifashion)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub l2: f64,
    pub l2_scope: L2Scope,
    pub temperature: f64,
    /// Network layers including the attribute modeling layer; 1 means no
    /// propagation layer.
    pub layers: usize,
    pub batch_size: usize,
    pub node_dropout: f64,
    /// Epochs without a Recall@K improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub variant: Variant,
    pub schedule: DimensionSchedule,
    pub k: usize,
    /// Fraction of each user's training items held out for early stopping;
    /// 0 stops on the test set.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::preset(Preset::AlibabaIfashion)
    }
}

impl TrainConfig {
    pub fn preset(preset: Preset) -> Self {
        let (temperature, d_max, d_min, layers) = match preset {
            Preset::AmazonBook => (0.25, 32, 4, 3),
            Preset::LastFm => (0.5, 64, 16, 3),
            Preset::AlibabaIfashion => (0.1, 64, 4, 2),
        };
        TrainConfig {
            learning_rate: 1e-4,
            l2: 1e-5,
            l2_scope: L2Scope::Batch,
            temperature,
            layers,
            batch_size: 1024,
            node_dropout: 0.0,
            patience: 10,
            max_epochs: 1000,
            seed: 2022,
            variant: Variant::Full,
            schedule: DimensionSchedule { d_min, d_max, c: 5000 },
            k: DEFAULT_K,
            validation_fraction: 0.0,
        }
    }

    pub fn depth(&self) -> usize {
        self.layers.saturating_sub(1)
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec::new(self.variant, self.depth(), self.temperature)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad(format!("l2 must be non-negative, got {}", self.l2));
        }
        if self.layers == 0 {
            return bad("layers must be at least 1".into());
        }
        if self.layers > 3 {
            warn!("layers = {} is outside the tested range 1..=3", self.layers);
        }
        if !(0.0..1.0).contains(&self.node_dropout) {
            return bad(format!("node_dropout must be in [0, 1), got {}", self.node_dropout));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad(format!(
                "validation_fraction must be in [0, 1), got {}",
                self.validation_fraction
            ));
        }
        if self.batch_size == 0 || self.k == 0 {
            return bad("batch_size and k must be positive".into());
        }
        self.schedule.validate()?;
        self.model_spec().validate()
    }
}
