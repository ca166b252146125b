//! Pooled-pixel metrics: score an untrained model and an oracle on every
//! evaluation split, and write the report as CSV.

use lai_fusion::dataio::NormStats;
use lai_fusion::dataio::{SceneSample, Split};
use lai_fusion::lossmetrics::{evaluate_split, MetricsReport};
use lai_fusion::model::{init_params, predict, Architecture, InputAblation, ModelConfig};
use lai_fusion::synthgen::{generate_eval_split, generate_series, SceneConfig};
use lai_fusion::Result;

fn main() -> Result<()> {
    let scene = SceneConfig {
        seed: 3,
        tile_size: 32,
        n_samples: 16,
        ..SceneConfig::default()
    };
    let train = generate_series(&scene)?;
    let stats = NormStats::fit(&train);
    let cfg = ModelConfig::default();
    let params = init_params::<f32>(&cfg, Architecture::Full, 0)?;

    let mut report = MetricsReport::default();
    for split in Split::EVAL {
        let samples = generate_eval_split(&scene, split, 8)?;
        report.rows.push(evaluate_split(
            |s| {
                predict(
                    &params,
                    &cfg,
                    Architecture::Full,
                    InputAblation::NONE,
                    &stats,
                    s,
                )
            },
            &samples,
            split,
            "untrained",
        )?);
        report.rows.push(evaluate_split(
            |s: &[&SceneSample]| Ok(s.iter().map(|x| x.lai_target.clone()).collect()),
            &samples,
            split,
            "oracle",
        )?);
    }
    println!("{}", report.to_table());
    print!("{}", report.to_csv());
    Ok(())
}
