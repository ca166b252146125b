use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of acquisition timestamps per sample: t-2, t-1, t.
pub const TIMESTAMPS: usize = 3;
/// Past optical frames carrying LAI: t-2, t-1.
pub const PAST_FRAMES: usize = 2;
/// Radar polarizations, in storage order.
pub const POLARIZATIONS: usize = 2;
/// Radar channels stacked per sample (timestamps x polarizations).
pub const S1_CHANNELS: usize = TIMESTAMPS * POLARIZATIONS;
/// One-hot mask channels per sample (timestamps x classes).
pub const MASK_CHANNELS: usize = TIMESTAMPS * MaskClass::COUNT;

/// Scene classification of an optical pixel. Indices are part of the on-disk
/// format and must not change.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum MaskClass {
    NoData = 0,
    Cloud = 1,
    CloudShadow = 2,
    Water = 3,
    LandVegetated = 4,
    LandBare = 5,
}

impl MaskClass {
    pub const COUNT: usize = 6;

    pub const ALL: [MaskClass; 6] = [
        MaskClass::NoData,
        MaskClass::Cloud,
        MaskClass::CloudShadow,
        MaskClass::Water,
        MaskClass::LandVegetated,
        MaskClass::LandBare,
    ];

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(i: u8) -> Result<Self> {
        Self::ALL
            .get(i as usize)
            .copied()
            .ok_or_else(|| Error::DataCorruption(format!("mask class {i} is out of range 0..6")))
    }

    /// Pixels of these classes do not show the ground.
    pub fn is_occluded(self) -> bool {
        matches!(
            self,
            MaskClass::NoData | MaskClass::Cloud | MaskClass::CloudShadow
        )
    }
}

/// One training or evaluation unit: a tile observed at three timestamps.
///
/// All maps are `tile_size x tile_size`, row-major, and stacked along the
/// leading axis in timestamp order (oldest first).
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    pub tile_size: usize,
    /// `[timestamp][VH, VV][H][W]` radar backscatter.
    pub s1: Vec<f32>,
    /// `[t-2, t-1][H][W]` optical LAI; zero where the frame was occluded.
    pub s2_lai_past: Vec<f32>,
    /// `[timestamp][H][W]` mask class indices.
    pub masks: Vec<u8>,
    /// Day of year of the target acquisition, in `[0, 366)`.
    pub day_of_year: f32,
    /// `[H][W]` LAI at time t, native units.
    pub lai_target: Vec<f32>,
}

impl SceneSample {
    pub fn pixels(&self) -> usize {
        self.tile_size * self.tile_size
    }

    pub fn check(&self) -> Result<()> {
        let px = self.pixels();
        let fields = [
            ("s1", self.s1.len(), S1_CHANNELS * px),
            ("s2_lai_past", self.s2_lai_past.len(), PAST_FRAMES * px),
            ("masks", self.masks.len(), TIMESTAMPS * px),
            ("lai_target", self.lai_target.len(), px),
        ];
        for (name, got, want) in fields {
            if got != want {
                return Err(Error::Contract(format!(
                    "sample field `{name}` has {got} values, expected {want}"
                )));
            }
        }
        if let Some(&bad) = self.masks.iter().find(|&&m| m as usize >= MaskClass::COUNT) {
            return Err(Error::DataCorruption(format!(
                "mask class {bad} is out of range 0..6"
            )));
        }
        if !(0.0..366.0).contains(&self.day_of_year) {
            return Err(Error::Contract(format!(
                "day_of_year {} outside [0, 366)",
                self.day_of_year
            )));
        }
        Ok(())
    }

    pub fn mask(&self, timestamp: usize) -> &[u8] {
        let px = self.pixels();
        &self.masks[timestamp * px..(timestamp + 1) * px]
    }

    /// Mean occluded fraction over the two past optical frames.
    pub fn past_cloud_fraction(&self) -> f64 {
        let px = self.pixels();
        let occluded = self.masks[..PAST_FRAMES * px]
            .iter()
            .filter(|&&m| m == MaskClass::Cloud as u8)
            .count();
        occluded as f64 / (PAST_FRAMES * px) as f64
    }
}
