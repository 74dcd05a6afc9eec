//! Shared setup for the acceptance suite: the planted world and the scaled
//! training settings used on it.

use kgrec::embedding::DimensionSchedule;
use kgrec::model::Variant;
use kgrec::synth::{generate, SyntheticSpec, SyntheticWorld};
use kgrec::train::{Preset, TrainConfig};

/// 500 users, 300 items, 8 relations, one preferred relation per user.
pub fn planted_world() -> SyntheticWorld {
    generate(&SyntheticSpec::default()).expect("default synthetic world is feasible")
}

/// Fashion preset scaled to the planted world: 30 epochs, no early stop.
pub fn scaled_config(variant: Variant, seed: u64) -> TrainConfig {
    let mut c = TrainConfig::preset(Preset::AlibabaIfashion);
    c.learning_rate = 1e-2;
    c.l2 = 1e-5;
    c.batch_size = 256;
    c.temperature = 0.1;
    c.layers = 2;
    c.schedule = DimensionSchedule {
        d_min: 4,
        d_max: 16,
        c: 600,
    };
    c.max_epochs = 30;
    c.patience = 30;
    c.seed = seed;
    c.variant = variant;
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaled_config_is_valid() {
        for v in Variant::ALL {
            scaled_config(v, 1).validate().unwrap();
        }
    }
}
