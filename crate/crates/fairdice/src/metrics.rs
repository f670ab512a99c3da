//! Welfare and fairness metrics over per-objective returns, plus the
//! normalisation transforms applied before training.

use serde::{Deserialize, Serialize};

use crate::error::{FairdiceError, Result};

/// Nash social welfare Σ_i ln J_i over per-objective returns.
///
/// Any non-positive return makes the product degenerate; the sentinel −∞ is
/// returned together with a flag so callers can distinguish "legitimately
/// abysmal" from a numerical accident.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NswResult {
    pub value: f64,
    pub had_nonpositive: bool,
}

/// Nash social welfare of a return vector.
pub fn nsw(returns: &[f64]) -> Result<NswResult> {
    if returns.is_empty() {
        return Err(FairdiceError::shape("nsw of an empty return vector"));
    }
    let mut value = 0.0;
    let mut had_nonpositive = false;
    for &j in returns {
        if j <= 0.0 {
            had_nonpositive = true;
            value = f64::NEG_INFINITY;
        } else if !had_nonpositive {
            value += j.ln();
        }
    }
    Ok(NswResult {
        value,
        had_nonpositive,
    })
}

/// Jain fairness index (Σ J)² / (K Σ J²); 1 on any uniform positive vector,
/// 1/K on a one-hot vector.
pub fn jain_index(returns: &[f64]) -> Result<f64> {
    if returns.is_empty() {
        return Err(FairdiceError::shape("jain index of an empty return vector"));
    }
    let sum: f64 = returns.iter().sum();
    let sum_sq: f64 = returns.iter().map(|j| j * j).sum();
    if sum_sq == 0.0 {
        // All-zero allocations are treated as perfectly (vacuously) even.
        return Ok(1.0);
    }
    Ok(sum * sum / (returns.len() as f64 * sum_sq))
}

/// Utilitarian welfare Σ_i J_i (0 for an empty vector).
pub fn utilitarian(returns: &[f64]) -> f64 {
    returns.iter().sum()
}

/// Normalisation statistics computed from a dataset and re-applied verbatim
/// at evaluation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    /// Per-objective reward minimum.
    pub reward_min: Vec<f64>,
    /// Per-objective reward maximum.
    pub reward_max: Vec<f64>,
    /// Objectives whose rewards never vary (mapped to 0 by min-max).
    pub constant_reward_dims: Vec<bool>,
    /// Per-dimension state mean (empty for index-represented states).
    pub state_mean: Vec<f64>,
    /// Per-dimension state standard deviation.
    pub state_std: Vec<f64>,
    /// State dimensions with zero variance (centred only, not scaled).
    pub constant_state_dims: Vec<bool>,
}

impl NormStats {
    /// Computes reward statistics from row-major `[n × k]` reward vectors.
    pub fn rewards_from_rows(rewards: &[f64], k: usize) -> Result<Self> {
        if k == 0 || rewards.len() % k != 0 || rewards.is_empty() {
            return Err(FairdiceError::shape(format!(
                "reward rows of width {k} cannot tile length {}",
                rewards.len()
            )));
        }
        let mut min = vec![f64::INFINITY; k];
        let mut max = vec![f64::NEG_INFINITY; k];
        for row in rewards.chunks_exact(k) {
            for (i, &r) in row.iter().enumerate() {
                min[i] = min[i].min(r);
                max[i] = max[i].max(r);
            }
        }
        let constant = min.iter().zip(&max).map(|(lo, hi)| lo == hi).collect();
        Ok(NormStats {
            reward_min: min,
            reward_max: max,
            constant_reward_dims: constant,
            state_mean: Vec::new(),
            state_std: Vec::new(),
            constant_state_dims: Vec::new(),
        })
    }

    /// Adds state statistics from row-major `[n × d]` observation vectors.
    pub fn with_states_from_rows(mut self, states: &[f64], d: usize) -> Result<Self> {
        if d == 0 || states.len() % d != 0 || states.is_empty() {
            return Err(FairdiceError::shape(format!(
                "state rows of width {d} cannot tile length {}",
                states.len()
            )));
        }
        let n = (states.len() / d) as f64;
        let mut mean = vec![0.0; d];
        for row in states.chunks_exact(d) {
            for (i, &s) in row.iter().enumerate() {
                mean[i] += s;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; d];
        for row in states.chunks_exact(d) {
            for (i, &s) in row.iter().enumerate() {
                let c = s - mean[i];
                var[i] += c * c;
            }
        }
        let std: Vec<f64> = var.iter().map(|v| (v / n).sqrt()).collect();
        self.constant_state_dims = std.iter().map(|&s| s == 0.0).collect();
        self.state_mean = mean;
        self.state_std = std;
        Ok(self)
    }

    /// Min-max normalises one reward vector in place: r ← (r − min)/(max − min).
    ///
    /// Constant objectives map to 0 so they cannot dominate the scalarised
    /// reward through an arbitrary offset.
    pub fn normalize_reward(&self, reward: &mut [f64]) -> Result<()> {
        if reward.len() != self.reward_min.len() {
            return Err(FairdiceError::shape(format!(
                "reward width {} != stats width {}",
                reward.len(),
                self.reward_min.len()
            )));
        }
        for (i, r) in reward.iter_mut().enumerate() {
            if self.constant_reward_dims[i] {
                *r = 0.0;
            } else {
                *r = (*r - self.reward_min[i]) / (self.reward_max[i] - self.reward_min[i]);
            }
        }
        Ok(())
    }

    /// Undoes [`NormStats::normalize_reward`] for non-constant objectives.
    pub fn denormalize_reward(&self, reward: &mut [f64]) -> Result<()> {
        if reward.len() != self.reward_min.len() {
            return Err(FairdiceError::shape(format!(
                "reward width {} != stats width {}",
                reward.len(),
                self.reward_min.len()
            )));
        }
        for (i, r) in reward.iter_mut().enumerate() {
            if !self.constant_reward_dims[i] {
                *r = *r * (self.reward_max[i] - self.reward_min[i]) + self.reward_min[i];
            }
        }
        Ok(())
    }

    /// Mean/std normalises one observation in place; constant dimensions are
    /// centred but not scaled.
    pub fn normalize_state(&self, state: &mut [f64]) -> Result<()> {
        if state.len() != self.state_mean.len() {
            return Err(FairdiceError::shape(format!(
                "state width {} != stats width {}",
                state.len(),
                self.state_mean.len()
            )));
        }
        for (i, s) in state.iter_mut().enumerate() {
            *s -= self.state_mean[i];
            if !self.constant_state_dims[i] {
                *s /= self.state_std[i];
            }
        }
        Ok(())
    }

    /// True when state statistics are present.
    pub fn has_state_stats(&self) -> bool {
        !self.state_mean.is_empty()
    }
}
