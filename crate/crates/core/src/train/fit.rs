use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{adam_step, lr_schedule, AdamHyper, AdamState, TrainConfig};
use crate::dataio::{NormStats, SceneSample, Split};
use crate::error::{Error, Result};
use crate::lossmetrics::{combined_loss, evaluate_split, masked_mse};
use crate::model::{
    forward, init_params, predict, Architecture, Batch, Checkpoint, EncoderKind, InputAblation,
    ParamStore,
};
use crate::tensor::Tape;

/// Salt separating the shuffle stream from the initialisation stream.
const SHUFFLE_SALT: u64 = 0x5348_5546_464c_4531;

/// One optimizer step. Loss terms a model does not produce are absent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub loss_dec: Option<f64>,
    pub loss_enc1: Option<f64>,
    pub loss_enc2: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub steps: u64,
    pub val_rmse: Option<f64>,
}

/// A training job. `init` holds the starting parameters for `architecture`.
#[derive(Clone, Debug)]
pub struct TrainRun<'a> {
    pub cfg: &'a TrainConfig,
    pub architecture: Architecture,
    pub ablation: InputAblation,
    pub stats: NormStats,
    pub init: ParamStore<f32>,
    pub train: &'a [SceneSample],
    /// When present, the returned checkpoint is the epoch with the lowest
    /// RMSE on these samples; otherwise it is the last one.
    pub validation: Option<&'a [SceneSample]>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> Option<f64> {
        self.steps.last().map(|s| s.loss)
    }
}

/// Which loss the model is trained on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    /// Masked MSE of a single encoder head.
    Head(EncoderKind),
    /// Decoder MSE plus the weighted encoder-head terms.
    Combined,
}

impl From<Architecture> for Objective {
    fn from(arch: Architecture) -> Self {
        match arch {
            Architecture::Encoder(kind) => Objective::Head(kind),
            Architecture::Full => Objective::Combined,
        }
    }
}

/// Runs mini-batch Adam over `run.train` for `cfg.epochs` epochs (or until
/// `cfg.max_steps`), calling `on_step` after every update.
pub fn train_model(
    run: TrainRun<'_>,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<TrainOutcome> {
    let cfg = run.cfg;
    cfg.validate()?;
    if run.train.is_empty() {
        return Err(Error::DegenerateDataset("no training samples".into()));
    }
    let mut params = run.init;
    let mut adam = AdamState::new(&params);
    let hyper = AdamHyper::from(cfg);
    let weights = cfg.loss_weights();
    let objective = Objective::from(run.architecture);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_SALT);
    let mut order: Vec<usize> = (0..run.train.len()).collect();

    let mut steps = Vec::new();
    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, ParamStore<f32>)> = None;
    let mut step: u64 = 0;

    'epochs: for epoch in 0..cfg.epochs {
        let lr = lr_schedule(cfg, epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut epoch_steps = 0u64;
        let mut stopped = false;
        for idx in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                stopped = true;
                break;
            }
            let samples: Vec<&SceneSample> = idx.iter().map(|&i| &run.train[i]).collect();
            let batch = Batch::<f32>::from_samples(&samples, &run.stats, run.ablation)?;
            if batch.valid_count() == 0 {
                continue;
            }
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape, true);
            let vars = batch.bind(&mut tape);
            let preds = forward(&mut tape, &bound, &cfg.model, run.architecture, &vars)?;
            let (loss, dec, enc1, enc2) = match objective {
                Objective::Head(kind) => {
                    let head = match kind {
                        EncoderKind::Enc1 => preds.enc1,
                        EncoderKind::Enc2 => preds.enc2,
                    }
                    .ok_or_else(|| {
                        Error::Contract(format!("model has no {} head", kind.prefix()))
                    })?;
                    let l = masked_mse(&mut tape, head, &batch.target, &batch.valid)?;
                    let (e1, e2) = match kind {
                        EncoderKind::Enc1 => (Some(l), None),
                        EncoderKind::Enc2 => (None, Some(l)),
                    };
                    (l, None, e1, e2)
                }
                Objective::Combined => {
                    let missing =
                        || Error::Contract("combined loss needs all three outputs".into());
                    let terms = combined_loss(
                        &mut tape,
                        &batch.target,
                        preds.dec.ok_or_else(missing)?,
                        preds.enc1.ok_or_else(missing)?,
                        preds.enc2.ok_or_else(missing)?,
                        &batch.valid,
                        weights,
                    )?;
                    (
                        terms.total,
                        Some(terms.dec),
                        Some(terms.enc1),
                        Some(terms.enc2),
                    )
                }
            };
            let scalar = |v| f64::from(tape.value(v).data()[0]);
            let loss_value = scalar(loss);
            if !loss_value.is_finite() {
                return Err(Error::TrainingDivergence {
                    step: step + 1,
                    param: "loss".into(),
                });
            }
            let record = StepRecord {
                step: step + 1,
                epoch,
                lr,
                loss: loss_value,
                loss_dec: dec.map(scalar),
                loss_enc1: enc1.map(scalar),
                loss_enc2: enc2.map(scalar),
            };
            tape.backward(loss)?;
            let grads = params.grads(&tape, &bound);
            adam_step(&mut params, &grads, &mut adam, lr, hyper)?;
            step += 1;
            epoch_steps += 1;
            loss_sum += loss_value;
            on_step(&record);
            steps.push(record);
        }
        if epoch_steps == 0 {
            if stopped {
                break 'epochs;
            }
            return Err(Error::DegenerateDataset(format!(
                "epoch {epoch}: every batch has an all-masked target"
            )));
        }
        let val_rmse = match run.validation {
            Some(val) if !val.is_empty() => {
                let row = evaluate_split(
                    |s| {
                        predict(
                            &params,
                            &cfg.model,
                            run.architecture,
                            run.ablation,
                            &run.stats,
                            s,
                        )
                    },
                    val,
                    Split::NonCloudy,
                    "validation",
                )?;
                if best.as_ref().is_none_or(|(b, _, _)| row.rmse < *b) {
                    best = Some((row.rmse, epoch, params.clone()));
                }
                Some(row.rmse)
            }
            _ => None,
        };
        epochs.push(EpochRecord {
            epoch,
            lr,
            mean_loss: loss_sum / epoch_steps as f64,
            steps: epoch_steps,
            val_rmse,
        });
        if stopped {
            break;
        }
    }

    let (best_epoch, params) = match best {
        Some((_, e, p)) => (Some(e), p),
        None => (None, params),
    };
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            config: cfg.model.clone(),
            architecture: run.architecture,
            ablation: run.ablation,
            stats: run.stats,
            params,
        },
        steps,
        epochs,
        best_epoch,
    })
}

/// Trains one encoder and its pixel-wise head from scratch. Normalisation
/// statistics are fitted on `train`.
pub fn pretrain_encoder(
    kind: EncoderKind,
    train: &[SceneSample],
    validation: Option<&[SceneSample]>,
    cfg: &TrainConfig,
    ablation: InputAblation,
    on_step: impl FnMut(&StepRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let arch = Architecture::Encoder(kind);
    train_model(
        TrainRun {
            cfg,
            architecture: arch,
            ablation,
            stats: NormStats::fit(train),
            init: init_params(&cfg.model, arch, cfg.seed)?,
            train,
            validation,
        },
        on_step,
    )
}

/// Builds the full model from two pretrained encoders (decoder freshly
/// initialised) and trains everything end to end on the combined loss.
pub fn finetune_full(
    enc1: &Checkpoint,
    enc2: &Checkpoint,
    train: &[SceneSample],
    validation: Option<&[SceneSample]>,
    cfg: &TrainConfig,
    on_step: impl FnMut(&StepRecord),
) -> Result<TrainOutcome> {
    let params = assemble_full(enc1, enc2, cfg.seed)?;
    let cfg = TrainConfig {
        model: enc1.config.clone(),
        ..cfg.clone()
    };
    train_model(
        TrainRun {
            cfg: &cfg,
            architecture: Architecture::Full,
            ablation: enc1.ablation,
            stats: enc1.stats,
            init: params,
            train,
            validation,
        },
        on_step,
    )
}

/// Full-model parameters with both encoders copied from their checkpoints.
pub fn assemble_full(enc1: &Checkpoint, enc2: &Checkpoint, seed: u64) -> Result<ParamStore<f32>> {
    let expect = |c: &Checkpoint, kind: EncoderKind| {
        if c.architecture != Architecture::Encoder(kind) {
            return Err(Error::Contract(format!(
                "expected a {} checkpoint, got {:?}",
                kind.prefix(),
                c.architecture
            )));
        }
        Ok(())
    };
    expect(enc1, EncoderKind::Enc1)?;
    expect(enc2, EncoderKind::Enc2)?;
    if enc1.config != enc2.config {
        return Err(Error::Contract(format!(
            "encoder checkpoints disagree on model config: {:?} vs {:?}",
            enc1.config, enc2.config
        )));
    }
    if enc1.stats != enc2.stats {
        return Err(Error::Contract(format!(
            "encoder checkpoints were normalised differently: {:?} vs {:?}",
            enc1.stats, enc2.stats
        )));
    }
    if enc1.ablation != enc2.ablation {
        return Err(Error::Contract(format!(
            "encoder checkpoints saw different inputs: {:?} vs {:?}",
            enc1.ablation, enc2.ablation
        )));
    }
    let mut params = init_params::<f32>(&enc1.config, Architecture::Full, seed)?;
    params.load_prefix(&enc1.params, "enc1.")?;
    params.load_prefix(&enc2.params, "enc2.")?;
    Ok(params)
}
