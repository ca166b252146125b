//! Generate a synthetic dataset, write it as tile packs and read it back.
//!
//! Usage: cargo run --example gen_data -- [OUT_DIR]

use lai_fusion::dataio::{load_tilepack, read_manifest, MaskClass, Split};
use lai_fusion::synthgen::{generate_eval_split, generate_series, SceneConfig};
use lai_fusion::{cli, Result};

fn main() -> Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "target/example-data".into());
    let out = std::path::PathBuf::from(out);
    let cfg = SceneConfig {
        seed: 7,
        tile_size: 32,
        n_samples: 16,
        ..SceneConfig::default()
    };
    cli::write_split(&out, Split::Train, generate_series(&cfg)?)?;
    for split in Split::EVAL {
        cli::write_split(&out, split, generate_eval_split(&cfg, split, 8)?)?;
    }

    for split in [
        Split::Train,
        Split::NonCloudy,
        Split::Cloudy,
        Split::UniqueAreas,
    ] {
        let dir = out.join(split.name());
        let manifest = read_manifest(&dir)?;
        let pack = load_tilepack(&dir)?;
        let cloud: f64 = pack
            .samples
            .iter()
            .map(|s| s.past_cloud_fraction())
            .sum::<f64>()
            / pack.samples.len() as f64;
        println!(
            "{:<13} {:>3} samples  tile {}  mean past cloud fraction {:.3}  blobs {}",
            split.name(),
            manifest.sample_count,
            manifest.tile_size,
            cloud,
            manifest.blobs.len()
        );
    }

    let s = &load_tilepack(out.join("train"))?.samples[0];
    let target_frame = s.mask(2);
    for class in MaskClass::ALL {
        let n = target_frame.iter().filter(|&&m| m == class.index()).count();
        println!("target-frame {class:?}: {n} px");
    }
    println!(
        "day of year {:.1}, mean target LAI {:.3}",
        s.day_of_year,
        s.lai_target.iter().map(|&v| v as f64).sum::<f64>() / s.lai_target.len() as f64
    );
    Ok(())
}
