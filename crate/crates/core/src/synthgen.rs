//! Procedural radar/optical/LAI time series with controllable cloud cover.
//!
//! Each sample is a pure function of `(seed, sample index)`: a smooth base
//! vegetation field scaled by a seasonal amplitude gives LAI at time t, past
//! frames differ from it by smooth drift fields, radar responds monotonically
//! to LAI with additive noise and never sees clouds, while optical LAI is
//! zeroed wherever a cloud blob covers the past frame.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataio::{MaskClass, SceneSample, Split, PAST_FRAMES, YEAR_DAYS};
use crate::error::{Error, Result};

/// Past-frame cloud fraction below which a sample counts as non-cloudy.
pub const NON_CLOUDY_MAX: f64 = 0.05;
/// Past-frame cloud fraction above which a sample counts as cloudy.
pub const CLOUDY_MIN: f64 = 0.25;

const OCTAVES: usize = 4;
const WATER_BELOW: f32 = 0.05;
const BARE_BELOW: f32 = 0.12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DaySampling {
    Uniform,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub seed: u64,
    pub tile_size: usize,
    pub n_samples: usize,
    /// Expected fraction of clouded pixels in each past optical frame.
    pub cloud_fraction: f64,
    pub s1_noise_std: f64,
    /// Amplitude of the LAI change between consecutive acquisitions.
    pub temporal_drift: f64,
    pub day_of_year: DaySampling,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            seed: 0,
            tile_size: 32,
            n_samples: 8,
            cloud_fraction: 0.2,
            s1_noise_std: 0.1,
            temporal_drift: 0.05,
            day_of_year: DaySampling::Uniform,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.cloud_fraction) {
            return Err(Error::Config(format!(
                "cloud_fraction {} outside [0, 1]",
                self.cloud_fraction
            )));
        }
        if self.tile_size < 4 {
            return Err(Error::Config(format!(
                "tile_size {} is below 4",
                self.tile_size
            )));
        }
        if !(self.s1_noise_std >= 0.0) || !(self.temporal_drift >= 0.0) {
            return Err(Error::Config(
                "noise and drift magnitudes must be non-negative".into(),
            ));
        }
        if let DaySampling::Fixed(d) = self.day_of_year {
            if !(0.0..366.0).contains(&d) {
                return Err(Error::Config(format!(
                    "fixed day_of_year {d} outside [0, 366)"
                )));
            }
        }
        Ok(())
    }
}

/// Seasonal LAI amplitude in `[0, 1]`.
pub fn seasonal_amplitude(day_of_year: f64) -> f64 {
    0.5 + 0.5 * (std::f64::consts::TAU * day_of_year / YEAR_DAYS).sin()
}

pub fn vh_response(lai: f32) -> f32 {
    0.7 * lai + 0.1 * lai * lai
}

pub fn vv_response(lai: f32) -> f32 {
    0.5 * lai + 0.2 * lai.max(0.0).sqrt()
}

pub fn generate_series(cfg: &SceneConfig) -> Result<Vec<SceneSample>> {
    cfg.validate()?;
    Ok((0..cfg.n_samples as u64)
        .map(|i| generate_sample(cfg, i))
        .collect())
}

/// The sample at `index` of the stream defined by `cfg.seed`.
pub fn generate_sample(cfg: &SceneConfig, index: u64) -> SceneSample {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    let n = cfg.tile_size;
    let px = n * n;

    let day = match cfg.day_of_year {
        DaySampling::Uniform => rng.gen_range(0.0..YEAR_DAYS),
        DaySampling::Fixed(d) => d,
    };
    let amplitude = seasonal_amplitude(day) as f32;

    let base = normalized(fbm(&mut rng, n, n / 2, OCTAVES));
    let drift: Vec<Vec<f32>> = (0..PAST_FRAMES)
        .map(|_| {
            normalized(fbm(&mut rng, n, n / 2, 2))
                .into_iter()
                .map(|v| 2.0 * v - 1.0)
                .collect()
        })
        .collect();

    // lai[0] = t-2, lai[1] = t-1, lai[2] = t
    let target: Vec<f32> = base.iter().map(|&b| amplitude * b).collect();
    let step = cfg.temporal_drift as f32;
    let prev: Vec<f32> = target
        .iter()
        .zip(&drift[0])
        .map(|(&l, &d)| (l - step * d).max(0.0))
        .collect();
    let prev2: Vec<f32> = prev
        .iter()
        .zip(&drift[1])
        .map(|(&l, &d)| (l - step * d).max(0.0))
        .collect();
    let lai = [prev2, prev, target];

    let ground: Vec<u8> = base
        .iter()
        .map(|&b| {
            if b < WATER_BELOW {
                MaskClass::Water
            } else if b < BARE_BELOW {
                MaskClass::LandBare
            } else {
                MaskClass::LandVegetated
            }
            .index()
        })
        .collect();

    let jitter: f64 = rng.gen_range(0.5..1.5);
    let past_fraction = (cfg.cloud_fraction * jitter).min(1.0);
    let clouds = [
        cloud_cover(&mut rng, n, past_fraction),
        cloud_cover(&mut rng, n, past_fraction),
        cloud_cover(&mut rng, n, past_fraction / 4.0),
    ];
    let mut masks = Vec::with_capacity(3 * px);
    for cover in &clouds {
        masks.extend(ground.iter().zip(cover).map(
            |(&g, &c)| {
                if c {
                    MaskClass::Cloud.index()
                } else {
                    g
                }
            },
        ));
    }

    let noise = Normal::new(0.0f32, cfg.s1_noise_std as f32).expect("validated noise std");
    let mut s1 = Vec::with_capacity(6 * px);
    for frame in &lai {
        s1.extend(
            frame
                .iter()
                .map(|&l| vh_response(l) + noise.sample(&mut rng)),
        );
        s1.extend(
            frame
                .iter()
                .map(|&l| vv_response(l) + noise.sample(&mut rng)),
        );
    }

    let mut s2_lai_past = Vec::with_capacity(PAST_FRAMES * px);
    for t in 0..PAST_FRAMES {
        s2_lai_past.extend(
            lai[t]
                .iter()
                .zip(&clouds[t])
                .map(|(&l, &c)| if c { 0.0 } else { l }),
        );
    }

    let [_, _, lai_target] = lai;
    SceneSample {
        tile_size: n,
        s1,
        s2_lai_past,
        masks,
        day_of_year: day as f32,
        lai_target,
    }
}

/// `(non_cloudy, cloudy)`; samples in the band between the thresholds are dropped.
pub fn split_by_cloudiness(samples: &[SceneSample]) -> (Vec<SceneSample>, Vec<SceneSample>) {
    let mut clear = Vec::new();
    let mut cloudy = Vec::new();
    for s in samples {
        let f = s.past_cloud_fraction();
        if f < NON_CLOUDY_MAX {
            clear.push(s.clone());
        } else if f > CLOUDY_MIN {
            cloudy.push(s.clone());
        }
    }
    (clear, cloudy)
}

/// Draws an evaluation split from a stream disjoint from training.
///
/// Non-cloudy and cloudy splits are filtered with [`split_by_cloudiness`]
/// from streams generated at low and high cloud cover respectively; the
/// unique-areas split is an unfiltered draw from a separate seed at the
/// training cloud cover.
pub fn generate_eval_split(
    train: &SceneConfig,
    split: Split,
    count: usize,
) -> Result<Vec<SceneSample>> {
    let (salt, cloud_fraction) = match split {
        Split::Train => {
            return generate_series(&SceneConfig {
                n_samples: count,
                ..train.clone()
            })
        }
        Split::NonCloudy => (0x6e6f_6e63, 0.02),
        Split::Cloudy => (0x636c_6f75, 0.6),
        Split::UniqueAreas => (0x756e_6971, train.cloud_fraction),
    };
    let cfg = SceneConfig {
        seed: train.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ salt,
        n_samples: count,
        cloud_fraction,
        ..train.clone()
    };
    cfg.validate()?;
    let mut out = Vec::with_capacity(count);
    let mut index = 0u64;
    while out.len() < count {
        if index > 100 * count as u64 + 100 {
            return Err(Error::DegenerateDataset(format!(
                "could not draw {count} samples for split {split}"
            )));
        }
        let s = generate_sample(&cfg, index);
        index += 1;
        let f = s.past_cloud_fraction();
        let keep = match split {
            Split::NonCloudy => f < NON_CLOUDY_MAX,
            Split::Cloudy => f > CLOUDY_MIN,
            _ => true,
        };
        if keep {
            out.push(s);
        }
    }
    Ok(out)
}

fn normalized(mut field: Vec<f32>) -> Vec<f32> {
    let lo = field.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = field.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = hi - lo;
    for v in &mut field {
        *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
    }
    field
}

/// Bilinear value noise with lattice spacing `cell` pixels.
fn value_noise(rng: &mut ChaCha8Rng, n: usize, cell: usize) -> Vec<f32> {
    let cell = cell.max(1);
    let g = n / cell + 2;
    let lattice: Vec<f32> = (0..g * g).map(|_| rng.gen::<f32>()).collect();
    let mut out = Vec::with_capacity(n * n);
    for y in 0..n {
        let fy = (y as f32 + 0.5) / cell as f32;
        let (iy, ty) = (fy.floor() as usize, fy.fract());
        for x in 0..n {
            let fx = (x as f32 + 0.5) / cell as f32;
            let (ix, tx) = (fx.floor() as usize, fx.fract());
            let at = |r: usize, c: usize| lattice[r * g + c];
            let top = at(iy, ix) * (1.0 - tx) + at(iy, ix + 1) * tx;
            let bot = at(iy + 1, ix) * (1.0 - tx) + at(iy + 1, ix + 1) * tx;
            out.push(top * (1.0 - ty) + bot * ty);
        }
    }
    out
}

/// Sum of `octaves` value-noise layers, halving spacing and amplitude each
/// octave, then smoothed by two 3x3 box-filter passes.
fn fbm(rng: &mut ChaCha8Rng, n: usize, base_cell: usize, octaves: usize) -> Vec<f32> {
    let mut acc = vec![0.0f32; n * n];
    let mut amp = 1.0f32;
    let mut cell = base_cell.max(1);
    for _ in 0..octaves {
        for (a, v) in acc.iter_mut().zip(value_noise(rng, n, cell)) {
            *a += amp * v;
        }
        amp *= 0.5;
        cell = (cell / 2).max(1);
    }
    box_blur(&box_blur(&acc, n), n)
}

fn box_blur(field: &[f32], n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; n * n];
    for y in 0..n {
        for x in 0..n {
            let (mut sum, mut count) = (0.0f32, 0.0f32);
            for yy in y.saturating_sub(1)..(y + 2).min(n) {
                for xx in x.saturating_sub(1)..(x + 2).min(n) {
                    sum += field[yy * n + xx];
                    count += 1.0;
                }
            }
            out[y * n + x] = sum / count;
        }
    }
    out
}

/// Cloud blobs covering `round(fraction * n^2)` pixels: the highest values
/// of a smooth noise field.
fn cloud_cover(rng: &mut ChaCha8Rng, n: usize, fraction: f64) -> Vec<bool> {
    let field = fbm(rng, n, (n / 4).max(2), 2);
    let count = (fraction * (n * n) as f64).round() as usize;
    let mut order: Vec<usize> = (0..n * n).collect();
    order.sort_by(|&a, &b| field[b].total_cmp(&field[a]).then(a.cmp(&b)));
    let mut cover = vec![false; n * n];
    for &i in order.iter().take(count) {
        cover[i] = true;
    }
    cover
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::valid_pixel_mask;

    #[test]
    fn cloud_free_config_has_no_clouds() {
        let cfg = SceneConfig {
            cloud_fraction: 0.0,
            n_samples: 5,
            ..SceneConfig::default()
        };
        for s in generate_series(&cfg).unwrap() {
            assert!(s.masks.iter().all(|&m| m != MaskClass::Cloud.index()));
            assert!(valid_pixel_mask(s.mask(2)).iter().all(|&v| v == 1));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SceneConfig::default();
        assert_eq!(
            generate_series(&cfg).unwrap(),
            generate_series(&cfg).unwrap()
        );
        let other = SceneConfig {
            seed: 1,
            ..cfg.clone()
        };
        assert_ne!(
            generate_series(&cfg).unwrap(),
            generate_series(&other).unwrap()
        );
    }

    #[test]
    fn mean_cloud_fraction_tracks_config() {
        let cfg = SceneConfig {
            cloud_fraction: 0.3,
            tile_size: 64,
            n_samples: 100,
            ..SceneConfig::default()
        };
        let samples = generate_series(&cfg).unwrap();
        let mean =
            samples.iter().map(|s| s.past_cloud_fraction()).sum::<f64>() / samples.len() as f64;
        assert!((0.25..=0.35).contains(&mean), "{mean}");
    }

    #[test]
    fn clouded_past_pixels_are_zero() {
        let cfg = SceneConfig {
            cloud_fraction: 0.4,
            n_samples: 4,
            ..SceneConfig::default()
        };
        for s in generate_series(&cfg).unwrap() {
            let px = s.pixels();
            for t in 0..PAST_FRAMES {
                for p in 0..px {
                    if s.masks[t * px + p] == MaskClass::Cloud.index() {
                        assert_eq!(s.s2_lai_past[t * px + p], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn vh_correlates_with_lai() {
        let cfg = SceneConfig {
            s1_noise_std: 0.1,
            n_samples: 12,
            ..SceneConfig::default()
        };
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for s in generate_series(&cfg).unwrap() {
            let px = s.pixels();
            // VH at timestamp t is channel 4
            xs.extend(s.s1[4 * px..5 * px].iter().map(|&v| v as f64));
            ys.extend(s.lai_target.iter().map(|&v| v as f64));
        }
        assert!(xs.len() >= 10_000);
        let n = xs.len() as f64;
        let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        let r = cov / (vx * vy).sqrt();
        assert!(r > 0.5, "{r}");
    }

    #[test]
    fn split_thresholds() {
        let tile = 10;
        let mk = |clouded: usize| {
            let mut masks = vec![MaskClass::LandVegetated.index(); 3 * tile * tile];
            for m in masks.iter_mut().take(clouded) {
                *m = MaskClass::Cloud.index();
            }
            SceneSample {
                tile_size: tile,
                s1: vec![0.0; 600],
                s2_lai_past: vec![0.0; 200],
                masks,
                day_of_year: 0.0,
                lai_target: vec![0.0; 100],
            }
        };
        // past frames hold 200 pixels: 0%, 40%, 15%
        let (clear, cloudy) = split_by_cloudiness(&[mk(0), mk(80), mk(30)]);
        assert_eq!(clear.len(), 1);
        assert_eq!(cloudy.len(), 1);
        assert_eq!(cloudy[0].past_cloud_fraction(), 0.4);
    }

    #[test]
    fn eval_splits_respect_thresholds() {
        let cfg = SceneConfig::default();
        let clear = generate_eval_split(&cfg, Split::NonCloudy, 4).unwrap();
        assert!(clear
            .iter()
            .all(|s| s.past_cloud_fraction() < NON_CLOUDY_MAX));
        let cloudy = generate_eval_split(&cfg, Split::Cloudy, 4).unwrap();
        assert!(cloudy.iter().all(|s| s.past_cloud_fraction() > CLOUDY_MIN));
        let train = generate_series(&cfg).unwrap();
        let unique = generate_eval_split(&cfg, Split::UniqueAreas, 8).unwrap();
        assert!(unique.iter().all(|u| !train.contains(u)));
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = SceneConfig {
            cloud_fraction: 1.5,
            ..SceneConfig::default()
        };
        assert!(matches!(generate_series(&cfg), Err(Error::Config(_))));
    }
}
