use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adam moments over a flat parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl OptState {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

/// One bias-corrected Adam update. Moments grow with zeros when the parameter
/// vector grows (new heads are appended at the end).
pub fn adam_step(params: &mut [f64], grads: &[f64], opt: &mut OptState) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::DimensionMismatch {
            expected: params.len(),
            got: grads.len(),
        });
    }
    if let Some(k) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Divergence {
            task: 0,
            epoch: opt.step as usize,
            reason: format!("non-finite gradient at coordinate {k}"),
        });
    }
    if opt.m.len() < params.len() {
        opt.m.resize(params.len(), 0.0);
        opt.v.resize(params.len(), 0.0);
    }
    opt.step += 1;
    let t = opt.step as i32;
    let c1 = 1.0 - opt.beta1.powi(t);
    let c2 = 1.0 - opt.beta2.powi(t);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(opt.m.iter_mut())
        .zip(opt.v.iter_mut())
    {
        *m = opt.beta1 * *m + (1.0 - opt.beta1) * g;
        *v = opt.beta2 * *v + (1.0 - opt.beta2) * g * g;
        let mhat = *m / c1;
        let vhat = *v / c2;
        *p -= opt.lr * mhat / (vhat.sqrt() + opt.eps);
    }
    Ok(())
}
