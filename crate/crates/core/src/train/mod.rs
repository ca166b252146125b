//! Optimisation: Adam with a stepped learning-rate schedule, the two-stage
//! encoder pretraining and end-to-end fine-tuning protocol, the ablation
//! harness, and the per-pixel linear baseline.

mod ablation;
mod adam;
mod fit;
mod mlr;

pub use ablation::{run_ablations, AblationData, AblationOutcome, Variant, VARIANTS};
pub use adam::{adam_step, AdamHyper, AdamState};
pub use fit::{
    assemble_full, finetune_full, pretrain_encoder, train_model, EpochRecord, Objective,
    StepRecord, TrainOutcome, TrainRun,
};
pub use mlr::{mlr_baseline, pixel_features, LinearRegression, MLR_FEATURES};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lossmetrics::LossWeights;
use crate::model::ModelConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr0: f64,
    pub decay_factor: f64,
    pub n_decays: usize,
    pub batch_size: usize,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Stop after this many optimizer steps, if set.
    pub max_steps: Option<u64>,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            lr0: 0.001,
            decay_factor: 0.2,
            n_decays: 2,
            batch_size: 32,
            alpha: 0.1,
            beta: 0.15,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            max_steps: None,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Single-core settings: batch 8 and a short run over the same schedule.
    pub fn desk() -> Self {
        TrainConfig {
            epochs: 12,
            batch_size: 8,
            ..Self::default()
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.lr0 > 0.0) {
            return Err(Error::Config(format!("lr0 {} must be positive", self.lr0)));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config(format!(
                "decay_factor {} outside (0, 1]",
                self.decay_factor
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        self.loss_weights().validate()?;
        self.model.validate()
    }
}

/// Learning rate for `epoch`: `lr0` times `decay_factor` once per decay
/// boundary already reached. Boundaries split the run into `n_decays + 1`
/// equal parts (epochs 33 and 66 of 100 for two decays).
pub fn lr_schedule(cfg: &TrainConfig, epoch: usize) -> f64 {
    let parts = cfg.n_decays + 1;
    let mut lr = cfg.lr0;
    for k in 1..=cfg.n_decays {
        if epoch >= k * cfg.epochs / parts {
            lr *= cfg.decay_factor;
        }
    }
    lr
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_examples() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_schedule(&cfg, 0), 0.001);
        assert_eq!(lr_schedule(&cfg, 32), 0.001);
        assert_eq!(lr_schedule(&cfg, 33), 0.0002);
        assert_eq!(lr_schedule(&cfg, 65), 0.0002);
        assert_eq!(lr_schedule(&cfg, 66), 0.00004);
        assert_eq!(lr_schedule(&cfg, 99), 0.00004);

        let flat = TrainConfig {
            decay_factor: 1.0,
            ..cfg.clone()
        };
        assert!((0..100).all(|e| lr_schedule(&flat, e) == 0.001));

        let short = TrainConfig { epochs: 3, ..cfg };
        let lrs: Vec<f64> = (0..3).map(|e| lr_schedule(&short, e)).collect();
        assert_eq!(lrs, vec![0.001, 0.001 * 0.2, 0.001 * 0.2 * 0.2]);
    }

    #[test]
    fn schedule_is_monotone_with_n_decays_plus_one_levels() {
        for epochs in [3usize, 7, 10, 50, 100] {
            for n_decays in 0..3usize {
                if epochs < n_decays + 1 {
                    continue;
                }
                let cfg = TrainConfig {
                    epochs,
                    n_decays,
                    ..TrainConfig::default()
                };
                let lrs: Vec<f64> = (0..epochs).map(|e| lr_schedule(&cfg, e)).collect();
                assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
                let mut distinct = lrs.clone();
                distinct.dedup();
                assert_eq!(
                    distinct.len(),
                    n_decays + 1,
                    "epochs {epochs} decays {n_decays}"
                );
            }
        }
    }

    #[test]
    fn validation_rejects_bad_values() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        assert!(TrainConfig {
            epochs: 0,
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            lr0: 0.0,
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            decay_factor: 1.5,
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig { alpha: -1.0, ..ok }.validate().is_err());
    }

    #[test]
    fn config_parses_from_toml() {
        let cfg: TrainConfig = toml::from_str("epochs = 5\nbatch_size = 4\n[model]\nencoder_depth = 1\nencoder_base = 4\ndecoder_depth = 1\ndecoder_base = 4\nfeatures = 4\n").unwrap();
        assert_eq!(cfg.epochs, 5);
        assert_eq!(cfg.lr0, 0.001);
        assert_eq!(cfg.model.encoder_base, 4);
        assert!(toml::from_str::<TrainConfig>("epoch = 5").is_err());
    }
}
