//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    shape: Vec<usize>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPSILON: f64 = 1e-8;

    /// Fresh state for a parameter of the given shape, with the usual moments.
    pub fn new(shape: &[usize]) -> Self {
        Self::with_moments(shape, Self::BETA1, Self::BETA2, Self::EPSILON)
    }

    pub fn with_moments(shape: &[usize], beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let n = shape.iter().product();
        AdamState {
            shape: shape.to_vec(),
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1,
            beta2,
            epsilon,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }
}

/// One Adam update of `param` in place.
pub fn adam_step(param: &mut Tensor, grad: &Tensor, state: &mut AdamState, lr: f64) -> Result<()> {
    if param.shape() != grad.shape() {
        return Err(Error::dim("adam_step", param.shape(), grad.shape()));
    }
    if param.shape() != state.shape.as_slice() {
        return Err(Error::dim("adam_step", param.shape(), &state.shape));
    }
    state.t += 1;
    let t = state.t as i32;
    let bias1 = 1.0 - state.beta1.powi(t);
    let bias2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    for (((p, &g), m), v) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / bias1;
        let v_hat = *v / bias2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}
