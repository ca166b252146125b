use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataio::{
    normalize, seasonality_features, valid_pixel_mask, MaskClass, NormStats, SceneSample,
    PAST_FRAMES, S1_CHANNELS, TIMESTAMPS,
};
use crate::error::{Error, Result};

/// Radar, past LAI, one-hot masks, (sin, cos) of the day, and a bias term.
pub const MLR_FEATURES: usize = S1_CHANNELS + PAST_FRAMES + TIMESTAMPS * MaskClass::COUNT + 2 + 1;

/// Diagonal jitter added to the scaled normal equations.
const RIDGE: f64 = 1e-8;

/// Per-pixel design rows, `pixels * MLR_FEATURES` values, row-major.
pub fn pixel_features(sample: &SceneSample, stats: &NormStats) -> Result<Vec<f64>> {
    sample.check()?;
    let norm = normalize(sample, stats)?;
    let px = sample.pixels();
    let (sin, cos) = seasonality_features(sample.day_of_year as f64);
    let mut rows = Vec::with_capacity(px * MLR_FEATURES);
    for i in 0..px {
        rows.extend((0..S1_CHANNELS).map(|c| f64::from(norm.s1[c * px + i])));
        rows.extend((0..PAST_FRAMES).map(|c| f64::from(norm.s2_lai_past[c * px + i])));
        for t in 0..TIMESTAMPS {
            let class = sample.masks[t * px + i] as usize;
            rows.extend((0..MaskClass::COUNT).map(|k| if k == class { 1.0 } else { 0.0 }));
        }
        rows.extend([sin, cos, 1.0]);
    }
    Ok(rows)
}

/// Ordinary least squares on [`pixel_features`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearRegression {
    pub coefficients: Vec<f64>,
    pub stats: NormStats,
}

impl LinearRegression {
    pub fn predict(&self, samples: &[&SceneSample]) -> Result<Vec<Vec<f32>>> {
        samples
            .iter()
            .map(|s| {
                let x = pixel_features(s, &self.stats)?;
                Ok(x.chunks(MLR_FEATURES)
                    .map(|row| {
                        row.iter()
                            .zip(&self.coefficients)
                            .map(|(a, b)| a * b)
                            .sum::<f64>() as f32
                    })
                    .collect())
            })
            .collect()
    }
}

/// Accumulated `X'X` and `X'y` of a least-squares problem.
struct NormalEquations {
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    rows: usize,
}

impl NormalEquations {
    fn new(cols: usize) -> Self {
        NormalEquations {
            xtx: DMatrix::zeros(cols, cols),
            xty: DVector::zeros(cols),
            rows: 0,
        }
    }

    fn add(&mut self, row: &[f64], y: f64) {
        let r = DVector::from_column_slice(row);
        self.xtx.ger(1.0, &r, &r, 1.0);
        self.xty.axpy(y, &r, 1.0);
        self.rows += 1;
    }

    /// Solves `(X'X / N + eps I) w = X'y / N` by Cholesky factorisation.
    fn solve(mut self) -> Result<Vec<f64>> {
        if self.rows == 0 {
            return Err(Error::DegenerateDataset(
                "no valid target pixels for the linear baseline".into(),
            ));
        }
        let scale = 1.0 / self.rows as f64;
        self.xtx *= scale;
        self.xty *= scale;
        for i in 0..self.xtx.nrows() {
            self.xtx[(i, i)] += RIDGE;
        }
        let chol = self.xtx.cholesky().ok_or_else(|| {
            Error::DegenerateFeatures("normal equations are not positive definite".into())
        })?;
        let w = chol.solve(&self.xty);
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateFeatures("non-finite coefficients".into()));
        }
        Ok(w.iter().copied().collect())
    }
}

/// Fits the per-pixel linear baseline on every valid target pixel of
/// `train`.
pub fn mlr_baseline(train: &[SceneSample]) -> Result<LinearRegression> {
    let stats = NormStats::fit(train);
    let mut eq = NormalEquations::new(MLR_FEATURES);
    for s in train {
        let x = pixel_features(s, &stats)?;
        let valid = valid_pixel_mask(s.mask(TIMESTAMPS - 1));
        for ((row, &v), &y) in x.chunks(MLR_FEATURES).zip(&valid).zip(&s.lai_target) {
            if v == 1 {
                eq.add(row, f64::from(y));
            }
        }
    }
    Ok(LinearRegression {
        coefficients: eq.solve()?,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate_series, SceneConfig};

    #[test]
    fn feature_count() {
        assert_eq!(MLR_FEATURES, 29);
    }

    #[test]
    fn recovers_an_exactly_linear_target() {
        let mut data = generate_series(&SceneConfig {
            tile_size: 8,
            n_samples: 6,
            ..SceneConfig::default()
        })
        .unwrap();
        let stats = NormStats::fit(&data);
        // Target built from radar and seasonality only, so the fit is exact
        // up to the ridge term.
        for s in &mut data {
            let x = pixel_features(s, &stats).unwrap();
            s.lai_target = x
                .chunks(MLR_FEATURES)
                .map(|r| (0.5 * r[0] - 0.25 * r[3] + 0.3 * r[26] + 2.0) as f32)
                .collect();
        }
        let model = mlr_baseline(&data).unwrap();
        let refs: Vec<&SceneSample> = data.iter().collect();
        let pred = model.predict(&refs).unwrap();
        for (p, s) in pred.iter().zip(&data) {
            let valid = valid_pixel_mask(s.mask(TIMESTAMPS - 1));
            for ((a, b), _) in p
                .iter()
                .zip(&s.lai_target)
                .zip(&valid)
                .filter(|(_, &v)| v == 1)
            {
                assert!((a - b).abs() < 1e-4, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn closed_form_matches_gradient_descent() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let (rows, cols) = (400, 6);
        let x: Vec<Vec<f64>> = (0..rows)
            .map(|_| {
                let mut r: Vec<f64> = (0..cols - 1).map(|_| rng.gen_range(-1.0..1.0)).collect();
                r.push(1.0);
                r
            })
            .collect();
        let y: Vec<f64> = x
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .map(|(j, v)| (j as f64 - 2.0) * v)
                    .sum::<f64>()
                    + rng.gen_range(-0.1..0.1)
            })
            .collect();
        let mut eq = NormalEquations::new(cols);
        for (r, &t) in x.iter().zip(&y) {
            eq.add(r, t);
        }
        let closed = eq.solve().unwrap();

        // Full-batch gradient descent on the mean squared residual.
        let mut w = vec![0.0; cols];
        for _ in 0..20_000 {
            let mut g = vec![0.0; cols];
            for (r, &t) in x.iter().zip(&y) {
                let e = r.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() - t;
                for (gj, rj) in g.iter_mut().zip(r) {
                    *gj += 2.0 * e * rj / rows as f64;
                }
            }
            for (wj, gj) in w.iter_mut().zip(&g) {
                *wj -= 0.5 * gj;
            }
        }
        for (a, b) in closed.iter().zip(&w) {
            assert!((a - b).abs() < 1e-5, "{closed:?} vs {w:?}");
        }
    }

    #[test]
    fn no_valid_pixels_is_an_error() {
        let mut data = generate_series(&SceneConfig {
            tile_size: 8,
            n_samples: 2,
            ..SceneConfig::default()
        })
        .unwrap();
        for s in &mut data {
            s.masks.iter_mut().for_each(|m| *m = 1);
        }
        assert!(matches!(
            mlr_baseline(&data),
            Err(Error::DegenerateDataset(_))
        ));
    }
}
