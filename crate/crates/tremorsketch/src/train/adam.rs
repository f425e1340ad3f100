//! Adam optimizer with bias correction.

use crate::nn::Param;
use crate::tensor::{s, Scalar, Tensor};

use super::TrainError;

/// Per-parameter first/second moment estimates plus the shared step counter.
#[derive(Clone, Debug)]
pub struct AdamState<T: Scalar> {
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Param<T>]) -> Self {
        AdamState {
            m: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One Adam update:
/// `m <- b1*m + (1-b1)*g`, `v <- b2*v + (1-b2)*g^2`, bias-corrected
/// `m_hat = m / (1 - b1^t)`, `v_hat = v / (1 - b2^t)`, then
/// `theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)`.
///
/// `grads` is aligned with `params`; `None` entries (frozen or unused
/// parameters) are skipped entirely.
pub fn adam_step<T: Scalar>(
    params: &mut [Param<T>],
    grads: &[Option<Tensor<T>>],
    state: &mut AdamState<T>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
) -> Result<(), TrainError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TrainError::OptimizerShapeMismatch {
            detail: format!(
                "params={}, grads={}, state={}",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        });
    }
    state.t += 1;
    let t = state.t as i32;
    let b1 = s::<T>(beta1);
    let b2 = s::<T>(beta2);
    let one = T::one();
    let m_corr = one - b1.powi(t);
    let v_corr = one - b2.powi(t);
    let lr_t = s::<T>(lr);
    let eps = s::<T>(epsilon);

    for (i, param) in params.iter_mut().enumerate() {
        let grad = match &grads[i] {
            Some(g) => g,
            None => continue,
        };
        if grad.shape() != param.value.shape() {
            return Err(TrainError::OptimizerShapeMismatch {
                detail: format!(
                    "gradient for '{}' has shape {:?}, parameter is {:?}",
                    param.name,
                    grad.shape(),
                    param.value.shape()
                ),
            });
        }
        if !grad.is_finite() {
            return Err(TrainError::NonFiniteGradient {
                param: param.name.clone(),
            });
        }
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        for (((theta, &g), m_e), v_e) in param
            .value
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.data_mut().iter_mut())
            .zip(v.data_mut().iter_mut())
        {
            *m_e = b1 * *m_e + (one - b1) * g;
            *v_e = b2 * *v_e + (one - b2) * g * g;
            let m_hat = *m_e / m_corr;
            let v_hat = *v_e / v_corr;
            *theta -= lr_t * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
