//! Adam optimizer state, one slot pair per parameter.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// First/second moment buffers plus the shared step counter. Moments are
/// kept in f64 regardless of the parameter dtype so bias correction stays
/// well conditioned early on.
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl AdamState {
    pub fn new<T: Scalar>(params: &[Tensor<T>]) -> Self {
        Self::with_betas(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas<T: Scalar>(params: &[Tensor<T>], beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![0.0; p.shape().len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.shape().len()]).collect(),
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update over all parameters. A parameter with no gradient this
    /// step contributes zero to its moments but still decays them, matching
    /// the usual "missing grad = zero grad" convention.
    pub fn step<T: Scalar>(&mut self, params: &[Tensor<T>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "adam state tracks {} parameters, got {}",
                self.m.len(),
                params.len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, p) in params.iter().enumerate() {
            let n = p.shape().len();
            if self.m[i].len() != n {
                return Err(Error::Contract(format!(
                    "adam slot {i} sized for {} values, parameter has {n}",
                    self.m[i].len()
                )));
            }
            let grad = p.grad();
            let mut data = p.data_mut();
            for j in 0..n {
                let g = grad.as_ref().map_or(0.0, |g| g[j].as_f64());
                let m = &mut self.m[i][j];
                let v = &mut self.v[i][j];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                let upd = lr * mhat / (vhat.sqrt() + self.eps);
                data[j] = T::of(data[j].as_f64() - upd);
            }
        }
        Ok(())
    }
}
