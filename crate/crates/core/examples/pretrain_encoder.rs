//! Pretrain the past-LAI encoder on a small synthetic set, save the
//! checkpoint and reload it.
//!
//! Usage: cargo run --example pretrain_encoder -- [CKPT_DIR]

use lai_fusion::dataio::Split;
use lai_fusion::lossmetrics::evaluate_split;
use lai_fusion::model::{load_params, save_params, EncoderKind, InputAblation, ModelConfig};
use lai_fusion::synthgen::{generate_eval_split, generate_series, SceneConfig};
use lai_fusion::train::{pretrain_encoder, TrainConfig};
use lai_fusion::Result;

fn main() -> Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "target/example-enc2".into());
    let scene = SceneConfig {
        seed: 1,
        tile_size: 32,
        n_samples: 24,
        ..SceneConfig::default()
    };
    let train = generate_series(&scene)?;
    let val = generate_eval_split(&scene, Split::NonCloudy, 8)?;
    let cfg = TrainConfig {
        epochs: 6,
        batch_size: 8,
        model: ModelConfig {
            encoder_base: 8,
            decoder_base: 8,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    };

    let outcome = pretrain_encoder(
        EncoderKind::Enc2,
        &train,
        Some(&val),
        &cfg,
        InputAblation::NONE,
        |r| {
            if r.step % 6 == 0 {
                println!(
                    "step {:>3} epoch {} lr {:.0e} loss {:.5}",
                    r.step, r.epoch, r.lr, r.loss
                );
            }
        },
    )?;
    for e in &outcome.epochs {
        println!(
            "epoch {} mean loss {:.5} val rmse {:.4}",
            e.epoch,
            e.mean_loss,
            e.val_rmse.unwrap_or(f64::NAN)
        );
    }
    println!("kept epoch {:?}", outcome.best_epoch);

    save_params(&out, &outcome.checkpoint)?;
    let back = load_params(&out)?;
    assert_eq!(back, outcome.checkpoint);
    let row = evaluate_split(|s| back.predict(s), &val, Split::NonCloudy, "enc2")?;
    println!("reloaded from {out}: rmse {:.4} r2 {:.3}", row.rmse, row.r2);
    Ok(())
}
