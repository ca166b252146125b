use indexmap::IndexMap;

use super::fit::{finetune_full, pretrain_encoder, StepRecord};
use super::TrainConfig;
use crate::dataio::{SceneSample, Split};
use crate::error::{Error, Result};
use crate::lossmetrics::{evaluate_split, MetricsReport};
use crate::model::{Architecture, Checkpoint, EncoderKind, InputAblation};

/// One row group of the ablation table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Variant {
    pub name: &'static str,
    pub architecture: Architecture,
    pub ablation: InputAblation,
}

const fn enc(name: &'static str, kind: EncoderKind, masks: bool, seas: bool) -> Variant {
    Variant {
        name,
        architecture: Architecture::Encoder(kind),
        ablation: InputAblation {
            zero_masks: !masks,
            zero_seasonality: !seas,
        },
    }
}

/// Input-ablation variants in report order. The full model is fine-tuned
/// from the two encoders that see every input.
pub const VARIANTS: [Variant; 6] = [
    enc("s1", EncoderKind::Enc1, false, false),
    enc("s1_masks", EncoderKind::Enc1, true, false),
    enc("s1_masks_seas", EncoderKind::Enc1, true, true),
    enc("s2_masks", EncoderKind::Enc2, true, false),
    enc("s2_masks_seas", EncoderKind::Enc2, true, true),
    Variant {
        name: "all",
        architecture: Architecture::Full,
        ablation: InputAblation::NONE,
    },
];

impl Variant {
    pub fn by_name(name: &str) -> Option<Variant> {
        VARIANTS.iter().copied().find(|v| v.name == name)
    }
}

#[derive(Clone, Debug)]
pub struct AblationData {
    pub train: Vec<SceneSample>,
    /// Model selection set; see [`super::TrainRun::validation`].
    pub validation: Option<Vec<SceneSample>>,
    pub eval: Vec<(Split, Vec<SceneSample>)>,
}

#[derive(Clone, Debug)]
pub struct AblationOutcome {
    pub report: MetricsReport,
    pub checkpoints: IndexMap<String, Checkpoint>,
}

/// Trains every variant and scores it on every evaluation split.
/// `on_step` receives the variant name with each step record.
pub fn run_ablations(
    data: &AblationData,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&str, &StepRecord),
) -> Result<AblationOutcome> {
    cfg.validate()?;
    if data.eval.is_empty() {
        return Err(Error::Config(
            "ablation needs at least one evaluation split".into(),
        ));
    }
    let validation = data.validation.as_deref();
    let mut checkpoints: IndexMap<String, Checkpoint> = IndexMap::new();
    for v in VARIANTS {
        let ckpt = match v.architecture {
            Architecture::Encoder(kind) => {
                pretrain_encoder(kind, &data.train, validation, cfg, v.ablation, |r| {
                    on_step(v.name, r)
                })?
                .checkpoint
            }
            Architecture::Full => {
                let enc1 = &checkpoints["s1_masks_seas"];
                let enc2 = &checkpoints["s2_masks_seas"];
                finetune_full(enc1, enc2, &data.train, validation, cfg, |r| {
                    on_step(v.name, r)
                })?
                .checkpoint
            }
        };
        checkpoints.insert(v.name.to_string(), ckpt);
    }
    let mut report = MetricsReport::default();
    for v in VARIANTS {
        let ckpt = &checkpoints[v.name];
        for (split, samples) in &data.eval {
            report.rows.push(evaluate_split(
                |s| ckpt.predict(s),
                samples,
                *split,
                v.name,
            )?);
        }
    }
    Ok(AblationOutcome {
        report,
        checkpoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_table() {
        let names: Vec<&str> = VARIANTS.iter().map(|v| v.name).collect();
        assert_eq!(
            names,
            [
                "s1",
                "s1_masks",
                "s1_masks_seas",
                "s2_masks",
                "s2_masks_seas",
                "all"
            ]
        );
        let s1 = Variant::by_name("s1").unwrap();
        assert!(s1.ablation.zero_masks && s1.ablation.zero_seasonality);
        assert_eq!(
            Variant::by_name("s2_masks_seas").unwrap().ablation,
            InputAblation::NONE
        );
        assert!(Variant::by_name("nope").is_none());
    }
}
