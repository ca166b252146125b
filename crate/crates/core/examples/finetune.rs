//! The two-step protocol: pretrain both encoders, then fine-tune the full
//! model on the intermediate-supervision loss.

use lai_fusion::dataio::Split;
use lai_fusion::lossmetrics::evaluate_split;
use lai_fusion::model::{EncoderKind, InputAblation, ModelConfig};
use lai_fusion::synthgen::{generate_eval_split, generate_series, SceneConfig};
use lai_fusion::train::{finetune_full, pretrain_encoder, TrainConfig};
use lai_fusion::Result;

fn main() -> Result<()> {
    let scene = SceneConfig {
        seed: 2,
        tile_size: 32,
        n_samples: 24,
        ..SceneConfig::default()
    };
    let train = generate_series(&scene)?;
    let cloudy = generate_eval_split(&scene, Split::Cloudy, 8)?;
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 8,
        model: ModelConfig {
            encoder_base: 8,
            decoder_base: 8,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    };

    let enc1 = pretrain_encoder(
        EncoderKind::Enc1,
        &train,
        None,
        &cfg,
        InputAblation::NONE,
        |_| {},
    )?;
    let enc2 = pretrain_encoder(
        EncoderKind::Enc2,
        &train,
        None,
        &cfg,
        InputAblation::NONE,
        |_| {},
    )?;
    println!(
        "enc1 final loss {:.5}",
        enc1.final_loss().unwrap_or(f64::NAN)
    );
    println!(
        "enc2 final loss {:.5}",
        enc2.final_loss().unwrap_or(f64::NAN)
    );

    let full = finetune_full(
        &enc1.checkpoint,
        &enc2.checkpoint,
        &train,
        None,
        &cfg,
        |r| {
            if r.step % 3 == 1 {
                println!(
                    "step {:>3} loss {:.5} = dec {:.5} + 0.1 * enc1 {:.5} + 0.15 * enc2 {:.5}",
                    r.step,
                    r.loss,
                    r.loss_dec.unwrap_or(f64::NAN),
                    r.loss_enc1.unwrap_or(f64::NAN),
                    r.loss_enc2.unwrap_or(f64::NAN)
                );
            }
        },
    )?;

    for (name, ckpt) in [
        ("enc1", &enc1.checkpoint),
        ("enc2", &enc2.checkpoint),
        ("full", &full.checkpoint),
    ] {
        let row = evaluate_split(|s| ckpt.predict(s), &cloudy, Split::Cloudy, name)?;
        println!("{name:<5} cloudy rmse {:.4} r2 {:.3}", row.rmse, row.r2);
    }
    Ok(())
}
