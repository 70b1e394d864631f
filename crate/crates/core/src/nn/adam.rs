//! Bias-corrected Adam.

use crate::error::{Error, Result};
use crate::nn::scalar::Scalar;
use crate::nn::tensor::{Parameter, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates, one pair of buffers per parameter,
/// in parameter order.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new<E: Scalar>(params: &[Parameter<E>]) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![0.0; p.tensor.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.tensor.numel()]).collect(),
            step: 0,
        }
    }
}

/// One in-place Adam step over all parameters.
///
/// `grads` is aligned with `params`; moments are kept in f64 regardless of
/// the training precision so long runs do not drift.
pub fn adam_update<E: Scalar>(
    params: &mut [Parameter<E>],
    grads: &[Tensor<E>],
    state: &mut AdamState,
    hp: &AdamParams,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::InvalidInput(format!(
            "adam: {} params, {} grads, {} state slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        if g.numel() != p.tensor.numel() {
            return Err(Error::shape(
                format!("adam gradient for {}", p.name),
                p.tensor.shape(),
                g.shape(),
            ));
        }
        if g.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of parameter {}", p.name)));
        }
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        for (j, val) in p.tensor.data_mut().iter_mut().enumerate() {
            let gj = g.data()[j].as_f64();
            m[j] = hp.beta1 * m[j] + (1.0 - hp.beta1) * gj;
            v[j] = hp.beta2 * v[j] + (1.0 - hp.beta2) * gj * gj;
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            let delta = hp.lr * mhat / (vhat.sqrt() + hp.eps);
            *val = E::from_f64(val.as_f64() - delta);
        }
    }
    Ok(())
}
