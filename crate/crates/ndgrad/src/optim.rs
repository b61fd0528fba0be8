use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::Gradients;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    /// `ms ← decay·ms + (1−decay)·g²`, `mom ← momentum·mom + lr·g/√(ms+ε)`, `p ← p − mom`.
    Rmsprop { decay: f64, momentum: f64 },
    Adam { beta1: f64, beta2: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    #[serde(flatten)]
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub epsilon: f64,
    #[serde(default)]
    pub l2_weight: f64,
    #[serde(default)]
    pub max_grad_norm: Option<f64>,
}

impl OptimizerConfig {
    /// Shared RMSProp used by the actor-learners.
    pub fn a3c_rmsprop() -> Self {
        Self {
            kind: OptimizerKind::Rmsprop {
                decay: 0.99,
                momentum: 0.0,
            },
            learning_rate: 7e-4,
            epsilon: 1e-5,
            l2_weight: 0.0,
            max_grad_norm: Some(0.5),
        }
    }

    /// Adam used for demonstration pre-training.
    pub fn pretrain_adam() -> Self {
        Self {
            kind: OptimizerKind::Adam {
                beta1: 0.9,
                beta2: 0.999,
            },
            learning_rate: 5e-4,
            epsilon: 1e-5,
            l2_weight: 1e-5,
            max_grad_norm: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if !(self.l2_weight >= 0.0) {
            return Err(Error::InvalidConfig(format!("l2_weight must be >= 0, got {}", self.l2_weight)));
        }
        if let Some(m) = self.max_grad_norm {
            if !(m > 0.0) {
                return Err(Error::InvalidConfig(format!("max_grad_norm must be > 0, got {m}")));
            }
        }
        match self.kind {
            OptimizerKind::Rmsprop { decay, momentum } if !(0.0..1.0).contains(&decay) || momentum < 0.0 => {
                Err(Error::InvalidConfig("rmsprop decay must be in [0,1), momentum >= 0".into()))
            }
            OptimizerKind::Adam { beta1, beta2 } if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) => {
                Err(Error::InvalidConfig("adam betas must be in [0,1)".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Scale `grads` in place so its global norm is at most `max_norm`. Returns the pre-clip norm.
pub fn clip_global_norm<T: Real>(grads: &mut Gradients<T>, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(T::from_f64_lossy(max_norm / norm));
    }
    norm
}

/// Per-block optimizer slots.
#[derive(Clone, Debug)]
pub enum SlotState<T> {
    Rmsprop { mean_square: Vec<T>, momentum: Vec<T> },
    Adam { m: Vec<T>, v: Vec<T>, steps: u64 },
}

impl<T: Real> SlotState<T> {
    pub fn new(kind: &OptimizerKind, len: usize) -> Self {
        match kind {
            OptimizerKind::Rmsprop { .. } => SlotState::Rmsprop {
                mean_square: vec![T::zero(); len],
                momentum: vec![T::zero(); len],
            },
            OptimizerKind::Adam { .. } => SlotState::Adam {
                m: vec![T::zero(); len],
                v: vec![T::zero(); len],
                steps: 0,
            },
        }
    }

    /// Apply one update to `param` given its (already clipped) gradient.
    pub fn apply(&mut self, config: &OptimizerConfig, param: &mut Tensor<T>, grad: &[T]) {
        let lr = T::from_f64_lossy(config.learning_rate);
        let eps = T::from_f64_lossy(config.epsilon);
        let l2 = T::from_f64_lossy(config.l2_weight);
        let values = param.data_mut();
        match (self, &config.kind) {
            (SlotState::Rmsprop { mean_square, momentum }, OptimizerKind::Rmsprop { decay, momentum: mu }) => {
                let rho = T::from_f64_lossy(*decay);
                let mu = T::from_f64_lossy(*mu);
                for i in 0..values.len() {
                    let g = grad[i] + l2 * values[i];
                    mean_square[i] = rho * mean_square[i] + (T::one() - rho) * g * g;
                    momentum[i] = mu * momentum[i] + lr * g / (mean_square[i] + eps).sqrt();
                    values[i] -= momentum[i];
                }
            }
            (SlotState::Adam { m, v, steps }, OptimizerKind::Adam { beta1, beta2 }) => {
                *steps += 1;
                let b1 = T::from_f64_lossy(*beta1);
                let b2 = T::from_f64_lossy(*beta2);
                let c1 = T::one() - T::from_f64_lossy(beta1.powi(*steps as i32));
                let c2 = T::one() - T::from_f64_lossy(beta2.powi(*steps as i32));
                for i in 0..values.len() {
                    let g = grad[i] + l2 * values[i];
                    m[i] = b1 * m[i] + (T::one() - b1) * g;
                    v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                    let m_hat = m[i] / c1;
                    let v_hat = v[i] / c2;
                    values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
            _ => unreachable!("optimizer slots built for a different optimizer kind"),
        }
    }
}
