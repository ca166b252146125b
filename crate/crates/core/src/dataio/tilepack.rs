//! Directory container for a set of samples:
//!
//! ```text
//! <dir>/manifest.json   format version, tile size, count, dtype, split, days
//! <dir>/s1.bin          [n][3][2][H][W]  f32 little-endian
//! <dir>/s2_lai.bin      [n][2][H][W]
//! <dir>/masks.bin       [n][3][H][W]     class indices stored as f32
//! <dir>/target.bin      [n][H][W]
//! ```

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::sample::{SceneSample, PAST_FRAMES, S1_CHANNELS, TIMESTAMPS};
use crate::error::{Error, Result};

pub const TILEPACK_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
const DTYPE: &str = "f32le";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    NonCloudy,
    Cloudy,
    UniqueAreas,
}

impl Split {
    pub const EVAL: [Split; 3] = [Split::NonCloudy, Split::Cloudy, Split::UniqueAreas];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::NonCloudy => "non_cloudy",
            Split::Cloudy => "cloudy",
            Split::UniqueAreas => "unique_areas",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Split::Train,
            Split::NonCloudy,
            Split::Cloudy,
            Split::UniqueAreas,
        ]
        .into_iter()
        .find(|sp| sp.name() == s)
        .ok_or_else(|| Error::Config(format!("unknown split `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TilePack {
    pub split: Split,
    pub tile_size: usize,
    pub samples: Vec<SceneSample>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobEntry {
    pub name: String,
    pub file: String,
    /// Values per sample.
    pub elements: u64,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TilePackManifest {
    pub format_version: u32,
    pub tile_size: usize,
    pub sample_count: usize,
    pub dtype: String,
    pub split: Split,
    pub day_of_year: Vec<f32>,
    pub blobs: Vec<BlobEntry>,
}

fn field_layout(tile_size: usize) -> [(&'static str, &'static str, u64); 4] {
    let px = (tile_size * tile_size) as u64;
    [
        ("s1", "s1.bin", S1_CHANNELS as u64 * px),
        ("s2_lai", "s2_lai.bin", PAST_FRAMES as u64 * px),
        ("masks", "masks.bin", TIMESTAMPS as u64 * px),
        ("target", "target.bin", px),
    ]
}

fn write_blob(path: &Path, values: impl Iterator<Item = f32>) -> Result<()> {
    let mut bytes = Vec::new();
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn save_tilepack(dir: impl AsRef<Path>, pack: &TilePack) -> Result<()> {
    let dir = dir.as_ref();
    for s in &pack.samples {
        if s.tile_size != pack.tile_size {
            return Err(Error::Contract(format!(
                "sample tile size {} in a pack of {}",
                s.tile_size, pack.tile_size
            )));
        }
        s.check()?;
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let n = pack.samples.len() as u64;
    let blobs = field_layout(pack.tile_size)
        .iter()
        .map(|&(name, file, elements)| BlobEntry {
            name: name.to_string(),
            file: file.to_string(),
            elements,
            bytes: n * elements * 4,
        })
        .collect();
    let manifest = TilePackManifest {
        format_version: TILEPACK_VERSION,
        tile_size: pack.tile_size,
        sample_count: pack.samples.len(),
        dtype: DTYPE.to_string(),
        split: pack.split,
        day_of_year: pack.samples.iter().map(|s| s.day_of_year).collect(),
        blobs,
    };

    let ss = &pack.samples;
    write_blob(
        &dir.join("s1.bin"),
        ss.iter().flat_map(|s| s.s1.iter().copied()),
    )?;
    write_blob(
        &dir.join("s2_lai.bin"),
        ss.iter().flat_map(|s| s.s2_lai_past.iter().copied()),
    )?;
    write_blob(
        &dir.join("masks.bin"),
        ss.iter().flat_map(|s| s.masks.iter().map(|&m| m as f32)),
    )?;
    write_blob(
        &dir.join("target.bin"),
        ss.iter().flat_map(|s| s.lai_target.iter().copied()),
    )?;

    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<TilePackManifest> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let probe: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| manifest_err(&path, e))?;
    let found = probe
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| manifest_err(&path, "missing format_version"))?;
    if found != TILEPACK_VERSION as u64 {
        return Err(Error::VersionMismatch {
            found: found as u32,
            expected: TILEPACK_VERSION,
        });
    }
    let manifest: TilePackManifest =
        serde_json::from_value(probe).map_err(|e| manifest_err(&path, e))?;
    if manifest.dtype != DTYPE {
        return Err(manifest_err(
            &path,
            format!("unsupported dtype `{}`", manifest.dtype),
        ));
    }
    if manifest.day_of_year.len() != manifest.sample_count {
        return Err(manifest_err(
            &path,
            format!(
                "{} day_of_year entries for {} samples",
                manifest.day_of_year.len(),
                manifest.sample_count
            ),
        ));
    }
    Ok(manifest)
}

fn manifest_err(path: &Path, reason: impl fmt::Display) -> Error {
    Error::Manifest {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

fn read_blob(
    dir: &Path,
    manifest: &TilePackManifest,
    name: &str,
    elements: u64,
) -> Result<Vec<f32>> {
    let entry = manifest
        .blobs
        .iter()
        .find(|b| b.name == name)
        .ok_or_else(|| manifest_err(&dir.join(MANIFEST_FILE), format!("no blob entry `{name}`")))?;
    let expected = manifest.sample_count as u64 * elements * 4;
    if entry.elements != elements || entry.bytes != expected {
        return Err(Error::SizeMismatch {
            field: name.to_string(),
            expected,
            found: entry.bytes,
        });
    }
    let path: PathBuf = dir.join(&entry.file);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let found = bytes.len() as u64;
    if found < expected {
        return Err(Error::Truncated {
            field: name.to_string(),
            expected,
            found,
        });
    }
    if found > expected {
        return Err(Error::SizeMismatch {
            field: name.to_string(),
            expected,
            found,
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn load_tilepack(dir: impl AsRef<Path>) -> Result<TilePack> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let tile = manifest.tile_size;
    let [(_, _, n_s1), (_, _, n_lai), (_, _, n_mask), (_, _, n_tgt)] = field_layout(tile);
    let s1 = read_blob(dir, &manifest, "s1", n_s1)?;
    let lai = read_blob(dir, &manifest, "s2_lai", n_lai)?;
    let masks = read_blob(dir, &manifest, "masks", n_mask)?;
    let target = read_blob(dir, &manifest, "target", n_tgt)?;

    let mut samples = Vec::with_capacity(manifest.sample_count);
    for (i, &day) in manifest.day_of_year.iter().enumerate() {
        let slice = |v: &[f32], n: u64| v[i * n as usize..(i + 1) * n as usize].to_vec();
        let mask_vals = slice(&masks, n_mask)
            .into_iter()
            .map(|m| {
                if m.fract() != 0.0 || !(0.0..6.0).contains(&m) {
                    Err(Error::DataCorruption(format!("sample {i}: mask value {m}")))
                } else {
                    Ok(m as u8)
                }
            })
            .collect::<Result<Vec<u8>>>()?;
        let sample = SceneSample {
            tile_size: tile,
            s1: slice(&s1, n_s1),
            s2_lai_past: slice(&lai, n_lai),
            masks: mask_vals,
            day_of_year: day,
            lai_target: slice(&target, n_tgt),
        };
        sample.check()?;
        samples.push(sample);
    }
    Ok(TilePack {
        split: manifest.split,
        tile_size: tile,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(tile: usize, seed: u32) -> SceneSample {
        let px = tile * tile;
        let f = |k: usize, off: u32| {
            (0..k)
                .map(|i| (i as f32 + off as f32) * 0.125 - 3.0)
                .collect::<Vec<_>>()
        };
        SceneSample {
            tile_size: tile,
            s1: f(6 * px, seed),
            s2_lai_past: f(2 * px, seed + 1),
            masks: (0..3 * px)
                .map(|i| ((i + seed as usize) % 6) as u8)
                .collect(),
            day_of_year: 17.5 + seed as f32,
            lai_target: f(px, seed + 2),
        }
    }

    #[test]
    fn empty_pack_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let pack = TilePack {
            split: Split::Cloudy,
            tile_size: 8,
            samples: vec![],
        };
        save_tilepack(dir.path(), &pack).unwrap();
        assert_eq!(load_tilepack(dir.path()).unwrap(), pack);
    }

    #[test]
    fn version_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let pack = TilePack {
            split: Split::Train,
            tile_size: 4,
            samples: vec![tiny(4, 0)],
        };
        save_tilepack(dir.path(), &pack).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path)
            .unwrap()
            .replace("\"format_version\": 1", "\"format_version\": 9");
        fs::write(&path, text).unwrap();
        assert!(matches!(
            load_tilepack(dir.path()),
            Err(Error::VersionMismatch {
                found: 9,
                expected: 1
            })
        ));
    }

    #[test]
    fn split_names_parse() {
        for s in [
            Split::Train,
            Split::NonCloudy,
            Split::Cloudy,
            Split::UniqueAreas,
        ] {
            assert_eq!(s.name().parse::<Split>().unwrap(), s);
        }
        assert!("cloudless".parse::<Split>().is_err());
    }
}
