use std::collections::HashMap;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Architecture, InputAblation, ModelConfig};
use crate::dataio::NormStats;
use crate::error::{Error, ParamMismatch, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Ordered, uniquely named parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    params: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter `{name}`")));
        }
        self.params.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Parameters whose names start with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamStore<T> {
        ParamStore {
            params: self
                .params
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Copy every parameter of `src` whose name starts with `prefix` over the
    /// same-named parameter here. Names and shapes under the prefix must
    /// match exactly in both directions.
    pub fn load_prefix(&mut self, src: &ParamStore<T>, prefix: &str) -> Result<()> {
        let mut mismatch = ParamMismatch::default();
        for (name, value) in self.params.iter().filter(|(k, _)| k.starts_with(prefix)) {
            match src.get(name) {
                None => mismatch.missing.push(name.clone()),
                Some(v) if v.shape() != value.shape() => {
                    mismatch
                        .shape
                        .push((name.clone(), value.shape().to_vec(), v.shape().to_vec()))
                }
                Some(_) => {}
            }
        }
        for name in src.names().filter(|k| k.starts_with(prefix)) {
            if !self.params.contains_key(name) {
                mismatch.unexpected.push(name.to_string());
            }
        }
        if !mismatch.is_empty() {
            return Err(mismatch.into());
        }
        for (name, value) in self
            .params
            .iter_mut()
            .filter(|(k, _)| k.starts_with(prefix))
        {
            *value = src.get(name).expect("checked above").clone();
        }
        Ok(())
    }

    /// Register every parameter on `tape`.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Bound {
        Bound {
            vars: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), tape.leaf(v.clone(), trainable)))
                .collect(),
        }
    }

    /// Gradients of all bound parameters, zero-filled where none flowed.
    pub fn grads(&self, tape: &Tape<T>, bound: &Bound) -> ParamStore<T> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, v)| {
                    let g = bound
                        .vars
                        .get(k)
                        .and_then(|&var| tape.grad(var).cloned())
                        .unwrap_or_else(|| Tensor::zeros(v.shape()));
                    (k.clone(), g)
                })
                .collect(),
        }
    }
}

/// Tape handles for a bound [`ParamStore`].
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: HashMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| {
            Error::ParamMismatch(ParamMismatch {
                missing: vec![name.to_string()],
                ..Default::default()
            })
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

impl FromIterator<(String, Var)> for Bound {
    fn from_iter<I: IntoIterator<Item = (String, Var)>>(iter: I) -> Self {
        Bound {
            vars: iter.into_iter().collect(),
        }
    }
}

/// Initial weight distribution of a layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum WeightInit {
    /// Feeds a relu: `N(0, 2 / fan_in)`.
    Relu,
    /// Feeds a linear consumer: `N(0, 1 / fan_in)`.
    Linear,
    /// All zeros. Used for prediction layers so every model starts from a
    /// zero output whatever the seed; random heads on narrow U-nets can
    /// start orders of magnitude off and train far slower.
    Zero,
}

/// Deterministic parameter initialisation: fan-in scaled normal weights,
/// zero biases.
pub(crate) struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn weight<T: Scalar>(&mut self, shape: &[usize], kind: WeightInit) -> Tensor<T> {
        let gain = match kind {
            WeightInit::Relu => 2.0,
            WeightInit::Linear => 1.0,
            WeightInit::Zero => return Tensor::zeros(shape),
        };
        let fan_in: usize = shape[1..].iter().product();
        let dist = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("positive std");
        Tensor::from_fn(shape, |_| T::from_f64_lossy(dist.sample(&mut self.rng)))
    }

    pub fn conv<T: Scalar>(
        &mut self,
        store: &mut ParamStore<T>,
        name: &str,
        cout: usize,
        cin: usize,
        k: usize,
        kind: WeightInit,
    ) -> Result<()> {
        store.insert(format!("{name}.w"), self.weight(&[cout, cin, k, k], kind))?;
        store.insert(format!("{name}.b"), Tensor::zeros(&[cout]))
    }

    pub fn linear<T: Scalar>(
        &mut self,
        store: &mut ParamStore<T>,
        name: &str,
        dout: usize,
        din: usize,
        kind: WeightInit,
    ) -> Result<()> {
        store.insert(format!("{name}.w"), self.weight(&[dout, din], kind))?;
        store.insert(format!("{name}.b"), Tensor::zeros(&[dout]))
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;
const PARAMS_FILE: &str = "params.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the blob, in elements.
    offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CheckpointManifest {
    format_version: u32,
    dtype: String,
    config: ModelConfig,
    architecture: Architecture,
    ablation: InputAblation,
    stats: NormStats,
    params: Vec<ParamEntry>,
}

/// Everything needed to run a trained (sub)model.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub architecture: Architecture,
    /// Inputs the model was trained without.
    pub ablation: InputAblation,
    pub stats: NormStats,
    pub params: ParamStore<f32>,
}

/// Writes `<dir>/manifest.json` (names, shapes, offsets) and `<dir>/params.bin`
/// (all parameters as f32 little-endian, in manifest order).
pub fn save_params(dir: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(ckpt.params.len());
    let mut blob = Vec::with_capacity(ckpt.params.numel() * 4);
    let mut offset = 0;
    for (name, t) in ckpt.params.iter() {
        entries.push(ParamEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += t.len();
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_VERSION,
        dtype: "f32le".into(),
        config: ckpt.config.clone(),
        architecture: ckpt.architecture,
        ablation: ckpt.ablation,
        stats: ckpt.stats,
        params: entries,
    };
    let path = dir.join(PARAMS_FILE);
    fs::write(&path, blob).map_err(|e| Error::io(&path, e))?;
    let path = dir.join(crate::dataio::MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

pub fn load_params(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let path = dir.join(crate::dataio::MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let bad = |reason: String| Error::Manifest {
        path: path.clone(),
        reason,
    };
    let probe: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    let found = probe
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| bad("missing format_version".into()))?;
    if found != CHECKPOINT_VERSION as u64 {
        return Err(Error::VersionMismatch {
            found: found as u32,
            expected: CHECKPOINT_VERSION,
        });
    }
    let manifest: CheckpointManifest =
        serde_json::from_value(probe).map_err(|e| bad(e.to_string()))?;

    let blob_path = dir.join(PARAMS_FILE);
    let bytes = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    let total: usize = manifest
        .params
        .iter()
        .map(|p| p.shape.iter().product::<usize>())
        .sum();
    let expected = total as u64 * 4;
    let found = bytes.len() as u64;
    if found < expected {
        return Err(Error::Truncated {
            field: PARAMS_FILE.into(),
            expected,
            found,
        });
    }
    if found > expected {
        return Err(Error::SizeMismatch {
            field: PARAMS_FILE.into(),
            expected,
            found,
        });
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();

    let mut params = ParamStore::new();
    let mut offset = 0;
    for entry in manifest.params {
        if entry.offset != offset {
            return Err(bad(format!(
                "`{}` has offset {} (expected {offset})",
                entry.name, entry.offset
            )));
        }
        let n: usize = entry.shape.iter().product();
        let t = Tensor::new(entry.shape, values[offset..offset + n].to_vec())?;
        params
            .insert(entry.name, t)
            .map_err(|e| bad(e.to_string()))?;
        offset += n;
    }
    Ok(Checkpoint {
        config: manifest.config,
        architecture: manifest.architecture,
        ablation: manifest.ablation,
        stats: manifest.stats,
        params,
    })
}
