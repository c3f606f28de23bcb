//! Recognizer training: supervised contrastive loss over m-per-class
//! batches, hard-negative mining and interspersing, AdamW, and the
//! two-stage training loop. A softmax classifier trainer over the same
//! batches serves as the non-retrieval baseline.

mod loss;
mod mining;
mod optim;
mod sampler;
mod trainer;

pub use loss::{supcon_loss, LossOutput};
pub use mining::{mine_hard_negatives, nearest_classes, NeighborMap};
pub use optim::{adamw_step, AdamState, AdamWConfig};
pub use sampler::{intersperse_hard_sets, sample_epoch, TrainingBatch};
pub(crate) use trainer::argmax;
pub use trainer::{
    retrieval_top1, softmax_cross_entropy, train, train_classifier, train_with, EpochRecord, TrainOptions,
    TrainOutput, Validation,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    /// Crops per class in a batch.
    pub m: usize,
    pub classes_per_batch: usize,
    pub temperature: f64,
    /// Passes over all classes per epoch.
    pub passes_per_epoch: usize,
    /// Epochs per stage.
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub hard_negative_k: usize,
    /// Fraction of stage-2 batches that receive a hard set.
    pub hard_negative_fraction: f64,
    /// Run the second, hard-negative stage.
    pub hard_negatives: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            m: 4,
            classes_per_batch: 32,
            temperature: 0.1,
            passes_per_epoch: 10,
            epochs: 30,
            learning_rate: 1e-3,
            weight_decay: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            hard_negative_k: 8,
            hard_negative_fraction: 0.5,
            hard_negatives: true,
        }
    }
}

impl TrainerConfig {
    /// The published optimizer settings: learning rate 2e-5, batch 128.
    pub fn paper() -> Self {
        TrainerConfig {
            learning_rate: 2e-5,
            ..TrainerConfig::default()
        }
    }

    /// The published sampler batch: 256 classes x 4 variants = 1024.
    pub fn paper_large() -> Self {
        TrainerConfig {
            classes_per_batch: 256,
            ..TrainerConfig::paper()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(TrainerConfig::default()),
            "paper" => Ok(TrainerConfig::paper()),
            "paper-large" => Ok(TrainerConfig::paper_large()),
            other => Err(Error::Config(format!(
                "unknown trainer preset '{other}' (default, paper, paper-large)"
            ))),
        }
    }

    pub fn batch_size(&self) -> usize {
        self.m * self.classes_per_batch
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("trainer.{m}")));
        if self.m < 2 {
            return fail("m must be at least 2");
        }
        if self.classes_per_batch == 0 || self.passes_per_epoch == 0 {
            return fail("classes_per_batch and passes_per_epoch must be positive");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return fail("temperature must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) || !(self.weight_decay >= 0.0) {
            return fail("learning_rate must be positive and weight_decay non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return fail("betas must lie in [0, 1) and eps be positive");
        }
        if !(0.0..=1.0).contains(&self.hard_negative_fraction) {
            return fail("hard_negative_fraction must lie in [0, 1]");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_presets() {
        let d = TrainerConfig::default();
        assert_eq!((d.m, d.batch_size(), d.temperature, d.passes_per_epoch), (4, 128, 0.1, 10));
        assert_eq!((d.learning_rate, d.weight_decay, d.hard_negative_k), (1e-3, 5e-4, 8));
        let p = TrainerConfig::paper();
        assert_eq!((p.learning_rate, p.weight_decay, p.batch_size()), (2e-5, 5e-4, 128));
        assert_eq!(TrainerConfig::paper_large().batch_size(), 1024);
        assert!(TrainerConfig::preset("nope").is_err());
    }

    #[test]
    fn validation_rejects_single_view_batches() {
        let c = TrainerConfig {
            m: 1,
            ..TrainerConfig::default()
        };
        assert!(c.validate().is_err());
        let c = TrainerConfig {
            temperature: 0.0,
            ..TrainerConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = serde_json::from_str::<TrainerConfig>(r#"{"m": 4, "lr": 1}"#);
        assert!(err.is_err());
        let ok: TrainerConfig = serde_json::from_str(r#"{"epochs": 3}"#).unwrap();
        assert_eq!(ok.epochs, 3);
        assert_eq!(ok.m, 4);
    }
}
