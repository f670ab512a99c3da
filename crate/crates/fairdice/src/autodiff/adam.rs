//! Adam with bias correction and an optional cosine decay of the step size.

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{FairdiceError, Result};

/// Learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LrSchedule {
    /// The base rate at every step.
    Constant,
    /// Half-cosine from the base rate at step 0 down to exactly 0 at the
    /// final step of the given budget.
    CosineToZero { total_steps: usize },
}

/// Optimiser hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub schedule: LrSchedule,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            schedule: LrSchedule::Constant,
        }
    }
}

#[derive(Debug, Clone)]
struct Slot {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam state over a fixed family of parameter tensors.
///
/// The i-th tensor passed to [`Adam::step_tensors`] must always have the size
/// declared at construction; first and second moments are kept per slot.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    step: usize,
    slots: Vec<Slot>,
}

impl Adam {
    /// Fresh optimiser for tensors of the given sizes.
    pub fn new(cfg: AdamConfig, sizes: &[usize]) -> Self {
        Adam {
            cfg,
            step: 0,
            slots: sizes
                .iter()
                .map(|&n| Slot {
                    m: vec![0.0; n],
                    v: vec![0.0; n],
                })
                .collect(),
        }
    }

    /// Number of completed steps.
    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Learning rate that the next [`Adam::step_tensors`] call will apply.
    pub fn current_lr(&self) -> f64 {
        self.lr_at(self.step)
    }

    fn lr_at(&self, t: usize) -> f64 {
        match self.cfg.schedule {
            LrSchedule::Constant => self.cfg.lr,
            LrSchedule::CosineToZero { total_steps } => {
                if total_steps <= 1 {
                    return if t == 0 { self.cfg.lr } else { 0.0 };
                }
                let frac = (t.min(total_steps - 1)) as f64 / (total_steps - 1) as f64;
                self.cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }

    /// One update over all tensors, reading each tensor's gradient buffer.
    ///
    /// Errors on a missing gradient, a size mismatch, or non-finite gradient
    /// entries (which would silently poison the moments).
    pub fn step_tensors(&mut self, tensors: &mut [&mut Tensor]) -> Result<()> {
        if tensors.len() != self.slots.len() {
            return Err(FairdiceError::shape(format!(
                "optimiser has {} slots but got {} tensors",
                self.slots.len(),
                tensors.len()
            )));
        }
        let lr = self.lr_at(self.step);
        let t = (self.step + 1) as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        for (slot, tensor) in self.slots.iter_mut().zip(tensors.iter_mut()) {
            let n = tensor.numel();
            if slot.m.len() != n {
                return Err(FairdiceError::shape(format!(
                    "slot of size {} fed tensor of size {n}",
                    slot.m.len()
                )));
            }
            let grad = tensor
                .grad()
                .ok_or_else(|| FairdiceError::shape("tensor has no gradient buffer".to_string()))?;
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(FairdiceError::NonFinite {
                    iteration: self.step,
                    what: "gradient passed to Adam".to_string(),
                });
            }
            let grad = grad.to_vec();
            let values = tensor.values_mut();
            for i in 0..n {
                let g = grad[i];
                slot.m[i] = self.cfg.beta1 * slot.m[i] + (1.0 - self.cfg.beta1) * g;
                slot.v[i] = self.cfg.beta2 * slot.v[i] + (1.0 - self.cfg.beta2) * g * g;
                let m_hat = slot.m[i] / bc1;
                let v_hat = slot.v[i] / bc2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
            }
        }
        self.step += 1;
        Ok(())
    }
}
