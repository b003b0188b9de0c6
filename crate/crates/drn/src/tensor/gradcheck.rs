//! Finite-difference verification of the backward pass.

use super::{Tape, Tensor};
use crate::error::{Error, Result};

/// Relative disagreement between an analytic and a numeric derivative,
/// floored so tiny gradients do not blow the ratio up.
fn rel_err(ad: f64, fd: f64) -> f64 {
    (ad - fd).abs() / 1.0f64.max(ad.abs()).max(fd.abs())
}

fn scalar_of(f: impl Fn(&Tape<f64>) -> Result<Tensor<f64>>) -> Result<f64> {
    let tape = Tape::inference();
    f(&tape)?.item()
}

/// Central-difference check of `f`'s gradient with respect to the elements
/// of `params`. `f` must rebuild its graph from scratch on the tape it is
/// given and return a scalar. Returns the worst relative error seen.
pub fn grad_check_params(
    f: impl Fn(&Tape<f64>) -> Result<Tensor<f64>>,
    params: &[Tensor<f64>],
    eps: f64,
) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::Contract(format!(
            "grad_check step must be positive, got {eps}"
        )));
    }
    for p in params {
        p.zero_grad();
    }
    let tape = Tape::new();
    let loss = f(&tape)?;
    tape.backward(&loss)?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.shape().len()]))
        .collect();

    let mut worst = 0.0f64;
    for (p, ad) in params.iter().zip(&analytic) {
        for j in 0..p.shape().len() {
            let orig = p.data()[j];
            p.data_mut()[j] = orig + eps;
            let plus = scalar_of(&f)?;
            p.data_mut()[j] = orig - eps;
            let minus = scalar_of(&f)?;
            p.data_mut()[j] = orig;
            let fd = (plus - minus) / (2.0 * eps);
            worst = worst.max(rel_err(ad[j], fd));
        }
    }
    Ok(worst)
}

/// Convenience wrapper checking the gradient with respect to a single input.
pub fn grad_check(
    f: impl Fn(&Tape<f64>, &Tensor<f64>) -> Result<Tensor<f64>>,
    x: &Tensor<f64>,
    eps: f64,
) -> Result<f64> {
    let x2 = x.clone();
    grad_check_params(move |tape| f(tape, &x2), std::slice::from_ref(x), eps)
}
