use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::NetError;

/// Global gradient-norm clip applied before every update.
pub const GRAD_CLIP_NORM: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// First-order optimizer state for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Optimizer {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(kind: OptimizerKind, len: usize) -> Self {
        let (m, v) = match kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::Adam => (vec![0.0; len], vec![0.0; len]),
        };
        Self { kind, m, v, t: 0 }
    }

    pub fn sgd(len: usize) -> Self {
        Self::new(OptimizerKind::Sgd, len)
    }

    pub fn adam(len: usize) -> Self {
        Self::new(OptimizerKind::Adam, len)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// Descends along `grad` (clipped in place to [`GRAD_CLIP_NORM`]).
    /// Non-finite gradients abort with `tensor` named in the error.
    pub fn step(
        &mut self,
        params: &mut [f64],
        grad: &mut [f64],
        lr: f64,
        tensor: &'static str,
    ) -> Result<(), NetError> {
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(NetError::NonFinite { tensor });
        }
        clip_norm(grad, GRAD_CLIP_NORM);
        if lr == 0.0 {
            return Ok(());
        }
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad.iter()) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                self.t += 1;
                let t = self.t as i32;
                let c1 = 1.0 - libm::pow(Self::BETA1, t as f64);
                let c2 = 1.0 - libm::pow(Self::BETA2, t as f64);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g;
                    self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g * g;
                    let mhat = self.m[i] / c1;
                    let vhat = self.v[i] / c2;
                    params[i] -= lr * mhat / (libm::sqrt(vhat) + Self::EPS);
                }
            }
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(NetError::NonFinite { tensor });
        }
        Ok(())
    }
}

/// Scales `grad` so its Euclidean norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = libm::sqrt(grad.iter().map(|g| g * g).sum::<f64>());
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}
