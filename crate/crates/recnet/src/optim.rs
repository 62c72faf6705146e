//! AdaDelta with gradient clipping by global norm.
//!
//! The update needs no learning rate: the step is the ratio of two running
//! RMS accumulators, one over squared gradients and one over squared updates.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaDeltaConfig {
    /// accumulator decay
    pub rho: f64,
    /// stabilizer inside both square roots
    pub eps: f64,
}

impl Default for AdaDeltaConfig {
    fn default() -> Self {
        AdaDeltaConfig {
            rho: 0.95,
            eps: 1e-6,
        }
    }
}

/// Per-parameter accumulators, aligned with one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaDeltaState {
    pub accum_grad: Tensor,
    pub accum_update: Tensor,
}

impl AdaDeltaState {
    pub fn zeros_like(param: &Tensor) -> Self {
        AdaDeltaState {
            accum_grad: Tensor::zeros(param.shape().to_vec()),
            accum_update: Tensor::zeros(param.shape().to_vec()),
        }
    }
}

/// One AdaDelta step on a single tensor, in place.
pub fn adadelta_update(
    param: &mut Tensor,
    grad: &Tensor,
    state: &mut AdaDeltaState,
    cfg: &AdaDeltaConfig,
) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != state.accum_grad.shape() {
        return Err(Error::shape(
            "adadelta_update",
            format!(
                "param {:?}, grad {:?}, state {:?}",
                param.shape(),
                grad.shape(),
                state.accum_grad.shape()
            ),
        ));
    }
    let p = param.data_mut();
    let g = grad.data();
    let ag = state.accum_grad.data_mut();
    let au = state.accum_update.data_mut();
    for i in 0..p.len() {
        ag[i] = cfg.rho * ag[i] + (1.0 - cfg.rho) * g[i] * g[i];
        let step = -((au[i] + cfg.eps).sqrt() / (ag[i] + cfg.eps).sqrt()) * g[i];
        au[i] = cfg.rho * au[i] + (1.0 - cfg.rho) * step * step;
        p[i] += step;
    }
    Ok(())
}

/// Scale all gradients so their joint Euclidean norm is at most `max_norm`.
/// Left untouched when already within the bound, keeping the values bit-exact.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for g in grads.iter() {
        for v in g.data() {
            sq += v * v;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let factor = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
    }
    norm
}
