//! Adam optimizer with bias correction.

use super::params::{GradBuffer, ParamSet};
use super::TensorError;

/// First- and second-moment estimates plus hyperparameters for Adam.
///
/// Moment buffers are aligned with the parameter set's registration order
/// (untrainable entries keep zero moments), which lets checkpoints store and
/// restore optimizer state positionally.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    /// Fresh state with standard moment decays (0.9, 0.999) and `eps = 1e-8`.
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .ids()
            .map(|id| vec![0.0; params.value(id).len()])
            .collect();
        Self {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Rebuilds state from checkpointed pieces, validating moment shapes
    /// against the parameter set.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        params: &ParamSet,
        step: u64,
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        m: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
    ) -> Result<Self, TensorError> {
        if m.len() != params.len() || v.len() != params.len() {
            return Err(TensorError::Invalid(format!(
                "optimizer state holds {} moment tensors, parameter set has {}",
                m.len(),
                params.len()
            )));
        }
        for (i, id) in params.ids().enumerate() {
            let n = params.value(id).len();
            if m[i].len() != n || v[i].len() != n {
                return Err(TensorError::ShapeMismatch {
                    context: format!("optimizer moments for {}", params.name(id)),
                    expected: vec![n],
                    got: vec![m[i].len(), v[i].len()],
                });
            }
        }
        Ok(Self {
            step,
            lr,
            beta1,
            beta2,
            eps,
            m,
            v,
        })
    }

    pub(crate) fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.m, &self.v)
    }
}

/// One Adam update over every trainable parameter.
///
/// Fails with [`TensorError::NonFinite`] if a gradient or an updated value
/// is NaN or infinite, leaving detection of diverged training to the caller.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &GradBuffer,
    state: &mut AdamState,
) -> Result<(), TensorError> {
    state.step += 1;
    let bc1 = 1.0 - state.beta1.powi(state.step as i32);
    let bc2 = 1.0 - state.beta2.powi(state.step as i32);
    for (i, id) in params.ids().enumerate() {
        if !params.trainable(id) {
            continue;
        }
        let g = grads.grad(id);
        if g.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite {
                context: format!("gradient of {}", params.name(id)),
            });
        }
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        let value = params.value_mut(id);
        for j in 0..value.len() {
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            value[j] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
        if value.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite {
                context: format!("updated value of {}", params.name(id)),
            });
        }
    }
    Ok(())
}
