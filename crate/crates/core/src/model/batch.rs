use serde::{Deserialize, Serialize};

use crate::dataio::{
    normalize, one_hot_masks, seasonality_features, valid_pixel_mask, NormStats, SceneSample,
    MASK_CHANNELS, PAST_FRAMES, S1_CHANNELS, TIMESTAMPS,
};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Inputs withheld from the network by zeroing them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputAblation {
    pub zero_masks: bool,
    pub zero_seasonality: bool,
}

impl InputAblation {
    pub const NONE: InputAblation = InputAblation {
        zero_masks: false,
        zero_seasonality: false,
    };
}

/// Network-ready tensors for a group of samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    /// `[N, 6, H, W]` standardised radar, channel `2 * t + pol`.
    pub s1: Tensor<T>,
    /// `[N, 2, H, W]` standardised past LAI.
    pub lai_past: Tensor<T>,
    /// `[N, 18, H, W]` one-hot masks.
    pub masks: Tensor<T>,
    /// `[N, 2]` (sin, cos) of the target day.
    pub season: Tensor<T>,
    /// `[N, 1, H, W]` native-unit target LAI.
    pub target: Tensor<T>,
    /// `[N, 1, H, W]` target-frame validity (0/1).
    pub valid: Tensor<T>,
}

/// Constant tape nodes holding a batch's inputs.
#[derive(Clone, Copy, Debug)]
pub struct BatchVars {
    pub s1: Var,
    pub lai_past: Var,
    pub masks: Var,
    pub season: Var,
}

impl<T: Scalar> Batch<T> {
    pub fn from_samples(
        samples: &[&SceneSample],
        stats: &NormStats,
        ablation: InputAblation,
    ) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::Contract("empty batch".into()));
        };
        let n = samples.len();
        let tile = first.tile_size;
        let px = tile * tile;
        let mut s1 = Vec::with_capacity(n * S1_CHANNELS * px);
        let mut lai = Vec::with_capacity(n * PAST_FRAMES * px);
        let mut masks = Vec::with_capacity(n * MASK_CHANNELS * px);
        let mut season = Vec::with_capacity(2 * n);
        let mut target = Vec::with_capacity(n * px);
        let mut valid = Vec::with_capacity(n * px);
        let cast = |v: f32| T::from_f64_lossy(v as f64);
        for s in samples {
            if s.tile_size != tile {
                return Err(Error::Contract("batch mixes tile sizes".into()));
            }
            s.check()?;
            let norm = normalize(s, stats)?;
            s1.extend(norm.s1.iter().map(|&v| cast(v)));
            lai.extend(norm.s2_lai_past.iter().map(|&v| cast(v)));
            if ablation.zero_masks {
                masks.extend(std::iter::repeat_n(T::zero(), MASK_CHANNELS * px));
            } else {
                masks.extend(one_hot_masks::<T>(&s.masks, TIMESTAMPS, tile, tile)?.into_data());
            }
            if ablation.zero_seasonality {
                season.extend([T::zero(), T::zero()]);
            } else {
                let (sin, cos) = seasonality_features(s.day_of_year as f64);
                season.extend([T::from_f64_lossy(sin), T::from_f64_lossy(cos)]);
            }
            target.extend(s.lai_target.iter().map(|&v| cast(v)));
            valid.extend(
                valid_pixel_mask(s.mask(TIMESTAMPS - 1))
                    .into_iter()
                    .map(|v| if v == 1 { T::one() } else { T::zero() }),
            );
        }
        Ok(Batch {
            s1: Tensor::new(vec![n, S1_CHANNELS, tile, tile], s1)?,
            lai_past: Tensor::new(vec![n, PAST_FRAMES, tile, tile], lai)?,
            masks: Tensor::new(vec![n, MASK_CHANNELS, tile, tile], masks)?,
            season: Tensor::new(vec![n, 2], season)?,
            target: Tensor::new(vec![n, 1, tile, tile], target)?,
            valid: Tensor::new(vec![n, 1, tile, tile], valid)?,
        })
    }

    pub fn len(&self) -> usize {
        self.target.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn valid_count(&self) -> usize {
        self.valid.data().iter().filter(|&&v| v > T::zero()).count()
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> BatchVars {
        BatchVars {
            s1: tape.constant(self.s1.clone()),
            lai_past: tape.constant(self.lai_past.clone()),
            masks: tape.constant(self.masks.clone()),
            season: tape.constant(self.season.clone()),
        }
    }
}
