//! Fit the per-pixel multi-linear regression baseline and inspect it.

use lai_fusion::dataio::Split;
use lai_fusion::lossmetrics::evaluate_split;
use lai_fusion::synthgen::{generate_eval_split, generate_series, SceneConfig};
use lai_fusion::train::{mlr_baseline, MLR_FEATURES};
use lai_fusion::Result;

fn main() -> Result<()> {
    let scene = SceneConfig {
        seed: 5,
        tile_size: 32,
        n_samples: 64,
        ..SceneConfig::default()
    };
    let model = mlr_baseline(&generate_series(&scene)?)?;
    let names = (0..6)
        .map(|i| format!("s1[t{}, {}]", i / 2, if i % 2 == 0 { "vh" } else { "vv" }))
        .chain((0..2).map(|t| format!("lai[t{t}]")))
        .chain((0..18).map(|i| format!("mask[t{}, class {}]", i / 6, i % 6)))
        .chain(["sin(day)".into(), "cos(day)".into(), "bias".into()]);
    assert_eq!(model.coefficients.len(), MLR_FEATURES);
    for (name, c) in names.zip(&model.coefficients) {
        println!("{name:<20} {c:+.4}");
    }
    for split in Split::EVAL {
        let samples = generate_eval_split(&scene, split, 16)?;
        let row = evaluate_split(|s| model.predict(s), &samples, split, "mlr")?;
        println!("{split:<13} rmse {:.4} r2 {:.3}", row.rmse, row.r2);
    }
    Ok(())
}
