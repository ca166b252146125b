use super::{OpKind, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Compares tape gradients of a scalar function against central differences.
///
/// Returns the largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`
/// over every element of every input, with
/// `numeric = (f(x + eps) - f(x - eps)) / (2 eps)`.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    grad_check_with_fault(None, f, inputs, eps)
}

#[doc(hidden)]
pub fn grad_check_with_fault<F>(
    fault: Option<OpKind>,
    f: F,
    inputs: &[Tensor<f64>],
    eps: f64,
) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = match fault {
        Some(kind) => Tape::with_fault(kind),
        None => Tape::new(),
    };
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect();

    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        match tape.value(out).data() {
            [v] => Ok(*v),
            _ => Err(Error::Contract(
                "grad_check: function must return a scalar".into(),
            )),
        }
    };

    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    let mut worst = 0.0f64;
    for (ti, grads) in analytic.iter().enumerate() {
        for ei in 0..inputs[ti].len() {
            let orig = inputs[ti].data()[ei];
            probe[ti].data_mut()[ei] = orig + eps;
            let plus = eval(&probe)?;
            probe[ti].data_mut()[ei] = orig - eps;
            let minus = eval(&probe)?;
            probe[ti].data_mut()[ei] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = grads.data()[ei];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
