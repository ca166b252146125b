//! Train every input-ablation variant at reduced width and print the
//! metrics table next to the per-pixel linear baseline.

use lai_fusion::dataio::Split;
use lai_fusion::lossmetrics::evaluate_split;
use lai_fusion::model::ModelConfig;
use lai_fusion::synthgen::{generate_eval_split, generate_series, SceneConfig};
use lai_fusion::train::{mlr_baseline, run_ablations, AblationData, TrainConfig};
use lai_fusion::Result;

fn main() -> Result<()> {
    let scene = SceneConfig {
        seed: 4,
        tile_size: 32,
        n_samples: 32,
        ..SceneConfig::default()
    };
    let train = generate_series(&scene)?;
    let eval = Split::EVAL
        .iter()
        .map(|&s| Ok((s, generate_eval_split(&scene, s, 8)?)))
        .collect::<Result<Vec<_>>>()?;
    let cfg = TrainConfig {
        epochs: 4,
        batch_size: 8,
        model: ModelConfig {
            encoder_base: 8,
            decoder_base: 8,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    };
    let data = AblationData {
        train,
        validation: None,
        eval,
    };
    let mut last = String::new();
    let mut outcome = run_ablations(&data, &cfg, |variant, _| {
        if variant != last {
            println!("training {variant}");
            last = variant.to_string();
        }
    })?;
    let mlr = mlr_baseline(&data.train)?;
    for (split, samples) in &data.eval {
        outcome
            .report
            .rows
            .push(evaluate_split(|s| mlr.predict(s), samples, *split, "mlr")?);
    }
    println!("{}", outcome.report.to_table());
    Ok(())
}
