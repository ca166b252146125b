//! Cloud-masked losses and pooled-pixel evaluation metrics.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::{valid_pixel_mask, SceneSample, Split, TIMESTAMPS};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Weights of the two intermediate (encoder head) terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.1,
            beta: 0.15,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "loss weight {name} = {v} must be finite and >= 0"
                )));
            }
        }
        Ok(())
    }
}

/// Mean squared error over pixels where `valid` is 1.
pub fn masked_mse<T: Scalar>(
    tape: &mut Tape<T>,
    pred: Var,
    gt: &Tensor<T>,
    valid: &Tensor<T>,
) -> Result<Var> {
    tape.masked_mse(pred, gt, valid)
}

#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub dec: Var,
    pub enc1: Var,
    pub enc2: Var,
}

/// `mse(dec) + alpha * mse(enc1) + beta * mse(enc2)`, every term gated by
/// the same validity mask.
#[allow(clippy::too_many_arguments)]
pub fn combined_loss<T: Scalar>(
    tape: &mut Tape<T>,
    gt: &Tensor<T>,
    dec: Var,
    enc1: Var,
    enc2: Var,
    valid: &Tensor<T>,
    w: LossWeights,
) -> Result<LossTerms> {
    w.validate()?;
    let l_dec = masked_mse(tape, dec, gt, valid)?;
    let l_enc1 = masked_mse(tape, enc1, gt, valid)?;
    let l_enc2 = masked_mse(tape, enc2, gt, valid)?;
    let a = tape.scale(l_enc1, T::from_f64_lossy(w.alpha));
    let b = tape.scale(l_enc2, T::from_f64_lossy(w.beta));
    let total = tape.add(l_dec, a)?;
    let total = tape.add(total, b)?;
    Ok(LossTerms {
        total,
        dec: l_dec,
        enc1: l_enc1,
        enc2: l_enc2,
    })
}

fn valid_pairs<T: Scalar>(pred: &[T], gt: &[T], valid: &[T]) -> Result<Vec<(f64, f64)>> {
    if pred.len() != gt.len() || pred.len() != valid.len() {
        return Err(Error::Contract(format!(
            "metric inputs disagree in length: {} / {} / {}",
            pred.len(),
            gt.len(),
            valid.len()
        )));
    }
    Ok(pred
        .iter()
        .zip(gt)
        .zip(valid)
        .filter(|(_, &m)| m > T::zero())
        .map(|((p, g), _)| {
            (
                p.to_f64().unwrap_or(f64::NAN),
                g.to_f64().unwrap_or(f64::NAN),
            )
        })
        .collect())
}

fn rmse_pairs(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::AllMasked);
    }
    let sse: f64 = pairs.iter().map(|(p, g)| (p - g) * (p - g)).sum();
    Ok((sse / pairs.len() as f64).sqrt())
}

fn r2_pairs(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::AllMasked);
    }
    let mean = pairs.iter().map(|(_, g)| g).sum::<f64>() / pairs.len() as f64;
    let ss_tot: f64 = pairs.iter().map(|(_, g)| (g - mean) * (g - mean)).sum();
    if pairs.len() < 2 || ss_tot == 0.0 {
        return Err(Error::UndefinedVariance);
    }
    let ss_res: f64 = pairs.iter().map(|(p, g)| (p - g) * (p - g)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Root mean squared error over valid pixels, in the units of `gt`.
pub fn rmse<T: Scalar>(pred: &[T], gt: &[T], valid: &[T]) -> Result<f64> {
    rmse_pairs(&valid_pairs(pred, gt, valid)?)
}

/// Coefficient of determination over valid pixels.
pub fn r2<T: Scalar>(pred: &[T], gt: &[T], valid: &[T]) -> Result<f64> {
    r2_pairs(&valid_pairs(pred, gt, valid)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub variant: String,
    pub split: Split,
    pub rmse: f64,
    pub r2: f64,
    pub n_valid_pixels: usize,
}

/// Scores a predictor on a split, pooling every valid target pixel.
///
/// `predict` maps a chunk of samples to one `H*W` LAI map per sample.
pub fn evaluate_split<F>(
    mut predict: F,
    samples: &[SceneSample],
    split: Split,
    variant: &str,
) -> Result<MetricsRow>
where
    F: FnMut(&[&SceneSample]) -> Result<Vec<Vec<f32>>>,
{
    if samples.is_empty() {
        return Err(Error::EmptySplit(split.name().into()));
    }
    let mut pairs = Vec::new();
    for chunk in samples.chunks(16) {
        let refs: Vec<&SceneSample> = chunk.iter().collect();
        let preds = predict(&refs)?;
        if preds.len() != chunk.len() {
            return Err(Error::Contract(format!(
                "predictor returned {} maps for {} samples",
                preds.len(),
                chunk.len()
            )));
        }
        for (s, p) in chunk.iter().zip(&preds) {
            let valid: Vec<f32> = valid_pixel_mask(s.mask(TIMESTAMPS - 1))
                .into_iter()
                .map(f32::from)
                .collect();
            pairs.extend(valid_pairs(p, &s.lai_target, &valid)?);
        }
    }
    Ok(MetricsRow {
        variant: variant.to_string(),
        split,
        rmse: rmse_pairs(&pairs)?,
        r2: r2_pairs(&pairs)?,
        n_valid_pixels: pairs.len(),
    })
}

pub const REPORT_HEADER: &str = "variant,split,rmse,r2,n_valid_pixels";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
}

impl MetricsReport {
    pub fn get(&self, variant: &str, split: Split) -> Option<&MetricsRow> {
        self.rows
            .iter()
            .find(|r| r.variant == variant && r.split == split)
    }

    pub fn variants(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.variant.as_str()) {
                out.push(&r.variant);
            }
        }
        out
    }

    /// Comma-separated rows under [`REPORT_HEADER`].
    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.variant, r.split, r.rmse, r.r2, r.n_valid_pixels
            )
            .unwrap();
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(REPORT_HEADER) {
            return Err(Error::DataCorruption(
                "metrics report header missing".into(),
            ));
        }
        let mut rows = Vec::new();
        for line in lines.filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::DataCorruption(format!("malformed metrics row `{line}`"));
            if f.len() != 5 {
                return Err(bad());
            }
            rows.push(MetricsRow {
                variant: f[0].to_string(),
                split: f[1].parse()?,
                rmse: f[2].parse().map_err(|_| bad())?,
                r2: f[3].parse().map_err(|_| bad())?,
                n_valid_pixels: f[4].parse().map_err(|_| bad())?,
            });
        }
        Ok(MetricsReport { rows })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Table with one row per variant and (RMSE, R2) column pairs per split.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<28}", "variant");
        for s in Split::EVAL {
            write!(out, " | {:^19}", s.name()).unwrap();
        }
        out.push('\n');
        write!(out, "{:<28}", "").unwrap();
        for _ in Split::EVAL {
            write!(out, " | {:>9} {:>9}", "rmse", "r2").unwrap();
        }
        out.push('\n');
        for v in self.variants() {
            write!(out, "{v:<28}").unwrap();
            for s in Split::EVAL {
                match self.get(v, s) {
                    Some(r) => write!(out, " | {:>9.4} {:>9.4}", r.rmse, r.r2).unwrap(),
                    None => write!(out, " | {:>9} {:>9}", "-", "-").unwrap(),
                }
            }
            out.push('\n');
        }
        out
    }
}
