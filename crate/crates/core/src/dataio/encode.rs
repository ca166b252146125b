use serde::{Deserialize, Serialize};

use super::sample::{MaskClass, SceneSample};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Period of the seasonal encoding, in days.
pub const YEAR_DAYS: f64 = 365.25;

/// `(sin, cos)` of the position of `day_of_year` within the year.
pub fn seasonality_features(day_of_year: f64) -> (f64, f64) {
    let phase = std::f64::consts::TAU * day_of_year / YEAR_DAYS;
    phase.sin_cos()
}

/// One-hot encode `timestamps` stacked class maps of `h x w` pixels into a
/// `[timestamps * 6, h, w]` tensor; channel `t * 6 + c` marks class `c` at
/// timestamp `t`.
pub fn one_hot_masks<T: Scalar>(
    masks: &[u8],
    timestamps: usize,
    h: usize,
    w: usize,
) -> Result<Tensor<T>> {
    let px = h * w;
    if masks.len() != timestamps * px {
        return Err(Error::Contract(format!(
            "one_hot_masks: {} values for {timestamps} maps of {h}x{w}",
            masks.len()
        )));
    }
    let mut out = Tensor::zeros(&[timestamps * MaskClass::COUNT, h, w]);
    let data = out.data_mut();
    for t in 0..timestamps {
        for (p, &class) in masks[t * px..(t + 1) * px].iter().enumerate() {
            if class as usize >= MaskClass::COUNT {
                return Err(Error::DataCorruption(format!(
                    "mask class {class} at timestamp {t}, pixel {p}"
                )));
            }
            data[(t * MaskClass::COUNT + class as usize) * px + p] = T::one();
        }
    }
    Ok(out)
}

/// 1 where the pixel shows the ground, 0 for no-data, cloud and cloud shadow.
pub fn valid_pixel_mask(mask: &[u8]) -> Vec<u8> {
    mask.iter()
        .map(|&c| match MaskClass::from_index(c) {
            Ok(class) if !class.is_occluded() => 1,
            _ => 0,
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldStats {
    pub mean: f64,
    pub std: f64,
}

impl FieldStats {
    pub const IDENTITY: FieldStats = FieldStats {
        mean: 0.0,
        std: 1.0,
    };

    /// Two-pass mean and population standard deviation; constant fields give
    /// exactly zero deviation.
    pub fn of(values: impl Iterator<Item = f32> + Clone) -> Self {
        let (n, sum) = values
            .clone()
            .fold((0usize, 0.0f64), |(n, s), v| (n + 1, s + v as f64));
        if n == 0 {
            return Self::IDENTITY;
        }
        let mean = sum / n as f64;
        let var = values.map(|v| (v as f64 - mean).powi(2)).sum::<f64>() / n as f64;
        FieldStats {
            mean,
            std: var.sqrt(),
        }
    }
}

/// Standardisation statistics for the model's continuous inputs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub s1: FieldStats,
    pub s2_lai_past: FieldStats,
}

impl NormStats {
    pub const IDENTITY: NormStats = NormStats {
        s1: FieldStats::IDENTITY,
        s2_lai_past: FieldStats::IDENTITY,
    };

    /// Pooled per-field moments over a training set.
    pub fn fit(samples: &[SceneSample]) -> Self {
        NormStats {
            s1: FieldStats::of(samples.iter().flat_map(|s| s.s1.iter().copied())),
            s2_lai_past: FieldStats::of(samples.iter().flat_map(|s| s.s2_lai_past.iter().copied())),
        }
    }
}

/// Standardise the radar and past-LAI fields. Target LAI stays in native units.
pub fn normalize(sample: &SceneSample, stats: &NormStats) -> Result<SceneSample> {
    for (name, f) in [("s1", stats.s1), ("s2_lai_past", stats.s2_lai_past)] {
        if !(f.std > 0.0) || !f.std.is_finite() {
            return Err(Error::DegenerateStatistics(format!(
                "field `{name}` has std {}",
                f.std
            )));
        }
    }
    let apply = |xs: &[f32], f: FieldStats| -> Vec<f32> {
        xs.iter()
            .map(|&v| ((v as f64 - f.mean) / f.std) as f32)
            .collect()
    };
    Ok(SceneSample {
        s1: apply(&sample.s1, stats.s1),
        s2_lai_past: apply(&sample.s2_lai_past, stats.s2_lai_past),
        ..sample.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn seasonality_examples() {
        let (s, c) = seasonality_features(0.0);
        assert_eq!((s, c), (0.0, 1.0));
        let (s, c) = seasonality_features(YEAR_DAYS / 2.0);
        assert!(s.abs() < 1e-15 && (c + 1.0).abs() < 1e-15);
        // reference values evaluated at 30 significant digits
        let (s, c) = seasonality_features(100.0);
        assert!((s - 0.988_853_706_420_588_4).abs() < 1e-12, "{s}");
        assert!((c - -0.148_890_386_856_454_8).abs() < 1e-12, "{c}");
    }

    proptest! {
        #[test]
        fn seasonality_is_periodic_and_on_circle(d in 0.0f64..2000.0) {
            let (s, c) = seasonality_features(d);
            let (s2, c2) = seasonality_features(d + YEAR_DAYS);
            prop_assert!((s - s2).abs() < 1e-12 && (c - c2).abs() < 1e-12);
            prop_assert!((s * s + c * c - 1.0).abs() < 1e-12);
        }

        #[test]
        fn one_hot_sums_to_one(masks in proptest::collection::vec(0u8..6, 3 * 4 * 5)) {
            let t: Tensor<f32> = one_hot_masks(&masks, 3, 4, 5).unwrap();
            for ts in 0..3 {
                for p in 0..20 {
                    let s: f32 = (0..6).map(|c| t.data()[(ts * 6 + c) * 20 + p]).sum();
                    prop_assert_eq!(s, 1.0);
                }
            }
        }

        #[test]
        fn valid_mask_counts_occlusions(masks in proptest::collection::vec(0u8..6, 64)) {
            let occluded = masks.iter().filter(|&&m| m <= 2).count();
            let valid = valid_pixel_mask(&masks);
            prop_assert_eq!(valid.iter().map(|&v| v as usize).sum::<usize>(), 64 - occluded);
        }
    }

    #[test]
    fn one_hot_examples() {
        let t: Tensor<f64> = one_hot_masks(&[2], 1, 1, 1).unwrap();
        assert_eq!(t.data(), &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let t: Tensor<f64> = one_hot_masks(&[4; 9], 1, 3, 3).unwrap();
        for c in 0..6 {
            let want = if c == 4 { 1.0 } else { 0.0 };
            assert!(t.data()[c * 9..(c + 1) * 9].iter().all(|&v| v == want));
        }
        assert!(matches!(
            one_hot_masks::<f32>(&[7], 1, 1, 1),
            Err(Error::DataCorruption(_))
        ));
    }

    #[test]
    fn valid_mask_examples() {
        assert!(valid_pixel_mask(&[1; 16]).iter().all(|&v| v == 0));
        assert!(valid_pixel_mask(&[3; 16]).iter().all(|&v| v == 1));
    }

    fn sample_with(s1: Vec<f32>, lai: Vec<f32>, tile: usize) -> SceneSample {
        SceneSample {
            tile_size: tile,
            s1,
            s2_lai_past: lai,
            masks: vec![4; 3 * tile * tile],
            day_of_year: 10.0,
            lai_target: vec![0.5; tile * tile],
        }
    }

    #[test]
    fn normalize_identity_and_degenerate() {
        let s = sample_with(
            (0..24).map(|i| i as f32).collect(),
            (0..8).map(|i| i as f32).collect(),
            2,
        );
        assert_eq!(normalize(&s, &NormStats::IDENTITY).unwrap(), s);
        let c = sample_with(vec![3.0; 24], vec![1.0; 8], 2);
        let stats = NormStats::fit(std::slice::from_ref(&c));
        assert!(matches!(
            normalize(&c, &stats),
            Err(Error::DegenerateStatistics(_))
        ));
    }

    #[test]
    fn normalize_standardises_moments() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let dist = Normal::new(5.0f32, 2.0).unwrap();
        let tile = 58; // 6 * 58^2 > 1e4 radar values
        let s1: Vec<f32> = (0..6 * tile * tile)
            .map(|_| dist.sample(&mut rng))
            .collect();
        let lai: Vec<f32> = (0..2 * tile * tile)
            .map(|_| dist.sample(&mut rng))
            .collect();
        let s = sample_with(s1, lai, tile);
        let stats = NormStats::fit(std::slice::from_ref(&s));
        let n = normalize(&s, &stats).unwrap();
        let m = FieldStats::of(n.s1.iter().copied());
        assert!(m.mean.abs() < 0.1 && (m.std - 1.0).abs() < 0.1, "{m:?}");
        let m = FieldStats::of(n.s2_lai_past.iter().copied());
        assert!(m.mean.abs() < 0.1 && (m.std - 1.0).abs() < 0.1, "{m:?}");
        assert_eq!(n.lai_target, s.lai_target);
        assert_eq!(n.masks, s.masks);
    }
}
