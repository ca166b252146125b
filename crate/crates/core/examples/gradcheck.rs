//! Verify the autodiff engine against central finite differences: one
//! hand-written function, then the full per-op suite.

use lai_fusion::checks::gradcheck_suite;
use lai_fusion::tensor::{grad_check, Tensor};
use lai_fusion::Result;

fn main() -> Result<()> {
    // f(x, w, b) = mse(relu(conv(x)), 0) over a 1x2x8x8 input.
    let x = Tensor::from_fn(&[1, 2, 8, 8], |i| ((i * 37 % 17) as f64 - 8.0) / 5.0);
    let w = Tensor::from_fn(&[3, 2, 3, 3], |i| ((i * 11 % 7) as f64 - 3.0) / 10.0);
    let b = Tensor::from_fn(&[3], |i| 0.05 * (i as f64 + 1.0));
    let gt = Tensor::zeros(&[1, 3, 8, 8]);
    let valid = Tensor::full(&[1, 3, 8, 8], 1.0);
    let err = grad_check(
        |t, v| {
            let y = t.conv2d(v[0], v[1], v[2], 1, 1)?;
            let y = t.relu(y);
            t.masked_mse(y, &gt, &valid)
        },
        &[x, w, b],
        1e-6,
    )?;
    println!("conv -> relu -> masked mse: max relative error {err:.2e}");

    for row in gradcheck_suite(3, None)? {
        println!(
            "{:<22} {:.2e} {}",
            row.name,
            row.max_rel_err,
            if row.passed { "ok" } else { "FAIL" }
        );
    }
    Ok(())
}
