use indexmap::IndexMap;

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::tensor::Scalar;

/// First and second moment estimates per parameter, plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: IndexMap<String, Vec<T>>,
    pub v: IndexMap<String, Vec<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = |_: &str, n: usize| vec![T::zero(); n];
        AdamState {
            m: params
                .iter()
                .map(|(k, p)| (k.to_string(), zeros(k, p.len())))
                .collect(),
            v: params
                .iter()
                .map(|(k, p)| (k.to_string(), zeros(k, p.len())))
                .collect(),
            t: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl From<&TrainConfig> for AdamHyper {
    fn from(cfg: &TrainConfig) -> Self {
        AdamHyper {
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
        }
    }
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of every parameter in `params`.
///
/// Gradients are checked before anything is modified, so a divergent step
/// leaves both `params` and `state` untouched.
pub fn adam_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &ParamStore<T>,
    state: &mut AdamState<T>,
    lr: f64,
    hyper: AdamHyper,
) -> Result<()> {
    for (name, p) in params.iter() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::Contract(format!("no gradient for parameter `{name}`")))?;
        if g.shape() != p.shape() {
            return Err(Error::Contract(format!(
                "gradient shape mismatch for `{name}`"
            )));
        }
        if !g.is_finite() {
            return Err(Error::TrainingDivergence {
                step: state.t + 1,
                param: name.to_string(),
            });
        }
    }

    state.t += 1;
    let t = state.t as i32;
    let c = |v: f64| T::from_f64_lossy(v);
    let (b1, b2) = (c(hyper.beta1), c(hyper.beta2));
    let one = T::one();
    let bc1 = c(1.0 - hyper.beta1.powi(t));
    let bc2 = c(1.0 - hyper.beta2.powi(t));
    let (lr, eps) = (c(lr), c(hyper.eps));

    for (name, p) in params.iter_mut() {
        let g = grads.get(name).expect("checked above").data();
        let m = state.m.get_mut(name).expect("state mirrors params");
        let v = state.v.get_mut(name).expect("state mirrors params");
        for (((w, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g)
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mi = b1 * *mi + (one - b1) * gi;
            *vi = b2 * *vi + (one - b2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
