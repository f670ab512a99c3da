//! Core objective functions for preference-weighted distribution correction.
//!
//! The critic objective treats a state value function ν and a positive
//! objective-preference vector μ = exp(ξ) jointly:
//!
//!   L(ν, ξ) = mean_b [ (1 − γ) ν(ṡ_b) + w*_b e_b − β f(w*_b) ]
//!             + sign · Σ_i ( u_i(k*_i) − μ_i k*_i )
//!
//! where e_b = Σ_i μ_i r_{b,i} + γ ν(s'_b) − ν(s_b) is a TD-style error,
//! w* = max{0, (f')⁻¹(e/β)} is the closed-form optimal importance weight for
//! the divergence f, and k*_i = (u'_i)⁻¹(μ_i) is the closed-form maximiser of
//! the utility regulariser.  Because w* and k* are exact inner maximisers, the
//! envelope theorem gives cheap analytic gradients: the middle term has
//! de/d(·) scaled by w*, and the regulariser term has d/dμ_i = −k*_i.
//!
//! The extracted policy is trained by weighted behavioural cloning with w*
//! normalised to batch mean one.  A deliberately faulty variant of that loss
//! reproduces a broadcasting slip in which per-sample weights and per-sample
//! log-probabilities are summed independently and multiplied, which collapses
//! the weighting into a constant scale on the plain cloning gradient.

use serde::{Deserialize, Serialize};

use crate::error::{FairdiceError, Result};

/// Norm threshold under the critic input-gradient penalty.
pub const GP_NORM_THRESHOLD: f64 = 5.0;

/// Concave utility applied to each objective's preference in the regulariser.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UtilityKind {
    /// u(x) = x^{1−α} / (1−α), with the α → 1 limit u(x) = ln x.
    AlphaFair,
    /// ln x for x ≥ 1, smoothly extended by −½(x−2)² + ½ below 1.
    PiecewiseLog,
}

/// Sign applied to the utility regulariser term of the critic loss.
///
/// `FlippedForTypoTest` negates the term, which turns the bounded objective
/// into one that is unbounded below in ξ and drives μ toward zero.  It exists
/// solely to demonstrate that failure mode; all real training uses `Correct`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegularizerSign {
    Correct,
    FlippedForTypoTest,
}

impl RegularizerSign {
    /// Multiplicative factor applied to the regulariser term.
    pub fn factor(self) -> f64 {
        match self {
            RegularizerSign::Correct => 1.0,
            RegularizerSign::FlippedForTypoTest => -1.0,
        }
    }
}

/// Hyper-parameters shared by the critic and policy objectives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Fairness exponent α ≥ 0 of the utility (0 recovers the utilitarian sum).
    pub alpha: f64,
    /// Divergence temperature β > 0.
    pub beta: f64,
    /// Coefficient λ ≥ 0 of the critic input-gradient penalty.
    pub lambda_gp: f64,
    /// Discount factor γ ∈ [0, 1).
    pub gamma: f64,
    /// Utility family used in the regulariser.
    pub utility_kind: UtilityKind,
    /// Sign of the regulariser term (see [`RegularizerSign`]).
    pub regularizer_sign: RegularizerSign,
}

impl HyperParams {
    /// Builds validated hyper-parameters with λ = 0, α-fair utility and the
    /// correct regulariser sign.
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let hp = HyperParams {
            alpha,
            beta,
            lambda_gp: 0.0,
            gamma,
            utility_kind: UtilityKind::AlphaFair,
            regularizer_sign: RegularizerSign::Correct,
        };
        hp.validate()?;
        Ok(hp)
    }

    /// Returns a copy with the given gradient-penalty coefficient.
    pub fn with_lambda_gp(mut self, lambda_gp: f64) -> Self {
        self.lambda_gp = lambda_gp;
        self
    }

    /// Returns a copy with the given utility family.
    pub fn with_utility_kind(mut self, kind: UtilityKind) -> Self {
        self.utility_kind = kind;
        self
    }

    /// Returns a copy with the given regulariser sign.
    pub fn with_regularizer_sign(mut self, sign: RegularizerSign) -> Self {
        self.regularizer_sign = sign;
        self
    }

    /// Checks every field against its domain.
    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(FairdiceError::config(format!(
                "alpha must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        if !self.beta.is_finite() || self.beta <= 0.0 {
            return Err(FairdiceError::config(format!(
                "beta must be finite and > 0, got {}",
                self.beta
            )));
        }
        if !self.lambda_gp.is_finite() || self.lambda_gp < 0.0 {
            return Err(FairdiceError::config(format!(
                "lambda_gp must be finite and >= 0, got {}",
                self.lambda_gp
            )));
        }
        if !self.gamma.is_finite() || !(0.0..1.0).contains(&self.gamma) {
            return Err(FairdiceError::config(format!(
                "gamma must lie in [0, 1), got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Preference vector stored as unconstrained logits ξ with μ = exp(ξ) > 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceVector {
    xi: Vec<f64>,
    mu: Vec<f64>,
}

impl PreferenceVector {
    /// Builds the preference vector from logits ξ.
    pub fn from_xi(xi: Vec<f64>) -> Self {
        let mu = xi.iter().map(|x| x.exp()).collect();
        PreferenceVector { xi, mu }
    }

    /// The uniform preference μ = 1 (ξ = 0) over `k` objectives.
    pub fn uniform(k: usize) -> Self {
        PreferenceVector {
            xi: vec![0.0; k],
            mu: vec![1.0; k],
        }
    }

    /// Logits ξ.
    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    /// Preferences μ = exp(ξ), always strictly positive in exact arithmetic.
    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    /// Number of objectives.
    pub fn len(&self) -> usize {
        self.xi.len()
    }

    /// True when there are no objectives.
    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }

    /// Smallest preference entry.
    pub fn min_mu(&self) -> f64 {
        self.mu.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// A batch of critic inputs: ν evaluated at s, s′ and the episode's initial
/// state, together with reward vectors and terminal flags.
#[derive(Debug, Clone)]
pub struct TdBatch {
    nu_s: Vec<f64>,
    nu_s_next: Vec<f64>,
    nu_s_init: Vec<f64>,
    /// Row-major `[batch × num_objectives]` rewards.
    rewards: Vec<f64>,
    terminal: Vec<bool>,
    num_objectives: usize,
}

impl TdBatch {
    /// Validates all lengths and builds the batch.
    pub fn new(
        nu_s: Vec<f64>,
        nu_s_next: Vec<f64>,
        nu_s_init: Vec<f64>,
        rewards: Vec<f64>,
        terminal: Vec<bool>,
        num_objectives: usize,
    ) -> Result<Self> {
        let b = nu_s.len();
        if b == 0 {
            return Err(FairdiceError::shape("empty TdBatch"));
        }
        if num_objectives == 0 {
            return Err(FairdiceError::shape("TdBatch needs >= 1 objective"));
        }
        if nu_s_next.len() != b || nu_s_init.len() != b || terminal.len() != b {
            return Err(FairdiceError::shape(format!(
                "TdBatch column lengths disagree: nu_s {}, nu_s_next {}, nu_s_init {}, terminal {}",
                b,
                nu_s_next.len(),
                nu_s_init.len(),
                terminal.len()
            )));
        }
        if rewards.len() != b * num_objectives {
            return Err(FairdiceError::shape(format!(
                "rewards length {} != batch {} x objectives {}",
                rewards.len(),
                b,
                num_objectives
            )));
        }
        Ok(TdBatch {
            nu_s,
            nu_s_next,
            nu_s_init,
            rewards,
            terminal,
            num_objectives,
        })
    }

    /// Batch size.
    pub fn len(&self) -> usize {
        self.nu_s.len()
    }

    /// True when the batch holds no transitions (never after construction).
    pub fn is_empty(&self) -> bool {
        self.nu_s.is_empty()
    }

    /// Number of reward objectives.
    pub fn num_objectives(&self) -> usize {
        self.num_objectives
    }

    /// The reward vector of sample `b`.
    pub fn reward_row(&self, b: usize) -> &[f64] {
        &self.rewards[b * self.num_objectives..(b + 1) * self.num_objectives]
    }

    /// Terminal flags.
    pub fn terminal(&self) -> &[bool] {
        &self.terminal
    }
}

// ---------------------------------------------------------------------------
// Divergence kernel
// ---------------------------------------------------------------------------

/// Soft-χ² generator: f(w) = w ln w − w + 1 on (0, 1), ½(w − 1)² on [1, ∞).
///
/// Extended continuously by f(0) = 1.  Negative arguments are a domain error.
pub fn soft_chi2_f(w: f64) -> Result<f64> {
    if !w.is_finite() || w < 0.0 {
        return Err(FairdiceError::domain(format!(
            "soft_chi2_f requires w >= 0, got {w}"
        )));
    }
    Ok(if w == 0.0 {
        1.0
    } else if w < 1.0 {
        w * w.ln() - w + 1.0
    } else {
        0.5 * (w - 1.0) * (w - 1.0)
    })
}

/// Derivative of [`soft_chi2_f`]: ln w on (0, 1), w − 1 on [1, ∞).
///
/// Approaches −∞ as w → 0⁺; `f64::NEG_INFINITY` is returned at w = 0.
pub fn soft_chi2_f_prime(w: f64) -> Result<f64> {
    if !w.is_finite() || w < 0.0 {
        return Err(FairdiceError::domain(format!(
            "soft_chi2_f_prime requires w >= 0, got {w}"
        )));
    }
    Ok(if w < 1.0 { w.ln() } else { w - 1.0 })
}

/// Inverse of the soft-χ² derivative: exp(y) for y < 0, y + 1 for y ≥ 0.
///
/// Total on all of ℝ and strictly positive in exact arithmetic (very negative
/// arguments underflow to 0.0 in floating point).
pub fn f_prime_inverse(y: f64) -> f64 {
    if y < 0.0 {
        y.exp()
    } else {
        y + 1.0
    }
}

/// TD-style error e = Σ_i μ_i r_i + γ ν(s′) (1 − terminal) − ν(s).
pub fn td_error(
    mu: &[f64],
    reward: &[f64],
    nu_s: f64,
    nu_s_next: f64,
    gamma: f64,
    terminal: bool,
) -> Result<f64> {
    if mu.len() != reward.len() {
        return Err(FairdiceError::shape(format!(
            "mu has {} entries but reward has {}",
            mu.len(),
            reward.len()
        )));
    }
    let scalarised: f64 = mu.iter().zip(reward).map(|(m, r)| m * r).sum();
    let bootstrap = if terminal { 0.0 } else { gamma * nu_s_next };
    Ok(scalarised + bootstrap - nu_s)
}

/// Closed-form optimal weight w* = max{0, (f′)⁻¹(e / β)}.
///
/// For the soft-χ² divergence the inverse is already non-negative, so the
/// clamp never bites; it is kept for safety with other generators.
pub fn w_star(e: f64, beta: f64) -> f64 {
    f_prime_inverse(e / beta).max(0.0)
}

// ---------------------------------------------------------------------------
// Utility regulariser
// ---------------------------------------------------------------------------

/// Utility value u(x) for the configured family.
pub fn utility(x: f64, hp: &HyperParams) -> Result<f64> {
    match hp.utility_kind {
        UtilityKind::AlphaFair => {
            if x <= 0.0 {
                return Err(FairdiceError::domain(format!(
                    "alpha-fair utility requires x > 0, got {x}"
                )));
            }
            if hp.alpha == 1.0 {
                Ok(x.ln())
            } else {
                Ok(x.powf(1.0 - hp.alpha) / (1.0 - hp.alpha))
            }
        }
        UtilityKind::PiecewiseLog => Ok(if x >= 1.0 {
            x.ln()
        } else {
            -0.5 * (x - 2.0) * (x - 2.0) + 0.5
        }),
    }
}

/// Utility derivative u′(x) for the configured family.
pub fn utility_prime(x: f64, hp: &HyperParams) -> Result<f64> {
    match hp.utility_kind {
        UtilityKind::AlphaFair => {
            if x <= 0.0 {
                return Err(FairdiceError::domain(format!(
                    "alpha-fair utility derivative requires x > 0, got {x}"
                )));
            }
            Ok(x.powf(-hp.alpha))
        }
        UtilityKind::PiecewiseLog => Ok(if x >= 1.0 { 1.0 / x } else { 2.0 - x }),
    }
}

/// Closed-form maximiser k* = (u′)⁻¹(μ_i) of u(k) − μ_i k.
///
/// α-fair: k* = μ^{−1/α} (the α = 1 case reduces to 1/μ).  Piecewise-log:
/// k* = 1/μ for μ ≤ 1 and 2 − μ above.  α = 0 makes u′ constant, so the
/// inverse does not exist and the call is a domain error; the loss functions
/// below instead drop the regulariser entirely in that utilitarian limit.
pub fn k_star(mu_i: f64, hp: &HyperParams) -> Result<f64> {
    if !mu_i.is_finite() || mu_i <= 0.0 {
        return Err(FairdiceError::domain(format!(
            "k_star requires mu > 0, got {mu_i}"
        )));
    }
    match hp.utility_kind {
        UtilityKind::AlphaFair => {
            if hp.alpha == 0.0 {
                Err(FairdiceError::domain(
                    "k_star is undefined at alpha = 0: u' is constant".to_string(),
                ))
            } else if hp.alpha == 1.0 {
                Ok(1.0 / mu_i)
            } else {
                Ok(mu_i.powf(-1.0 / hp.alpha))
            }
        }
        UtilityKind::PiecewiseLog => Ok(if mu_i <= 1.0 { 1.0 / mu_i } else { 2.0 - mu_i }),
    }
}

/// Whether the regulariser is active: at α = 0 the α-fair utility is linear
/// and the conjugate term degenerates, so μ is held fixed instead.
pub(crate) fn regularizer_active(hp: &HyperParams) -> bool {
    !(hp.utility_kind == UtilityKind::AlphaFair && hp.alpha == 0.0)
}

/// Regulariser value sign · Σ_i (u(k*_i) − μ_i k*_i); zero at α = 0.
pub fn regularizer_term(pref: &PreferenceVector, hp: &HyperParams) -> Result<f64> {
    if !regularizer_active(hp) {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for &mu_i in pref.mu() {
        let k = k_star(mu_i, hp)?;
        if hp.utility_kind == UtilityKind::AlphaFair && k <= 0.0 {
            return Err(FairdiceError::domain(format!(
                "nonpositive k* = {k} under alpha-fair utility (mu = {mu_i})"
            )));
        }
        total += utility(k, hp)? - mu_i * k;
    }
    Ok(hp.regularizer_sign.factor() * total)
}

/// Gradient of [`regularizer_term`] w.r.t. ξ: sign · (−k*_i) · μ_i per entry
/// by the envelope theorem (u′(k*) = μ kills the inner dependence).
pub fn regularizer_grad_xi(pref: &PreferenceVector, hp: &HyperParams) -> Result<Vec<f64>> {
    if !regularizer_active(hp) {
        return Ok(vec![0.0; pref.len()]);
    }
    let sign = hp.regularizer_sign.factor();
    pref.mu()
        .iter()
        .map(|&mu_i| Ok(sign * (-k_star(mu_i, hp)?) * mu_i))
        .collect()
}

// ---------------------------------------------------------------------------
// Critic loss
// ---------------------------------------------------------------------------

/// Analytic gradients of the critic loss, as cotangents on the ν inputs plus
/// the full ξ gradient.
#[derive(Debug, Clone)]
pub struct CriticGrads {
    /// ∂L/∂ν(s_b), one entry per sample.
    pub d_nu_s: Vec<f64>,
    /// ∂L/∂ν(s′_b), one entry per sample.
    pub d_nu_s_next: Vec<f64>,
    /// ∂L/∂ν(ṡ_b), one entry per sample.
    pub d_nu_s_init: Vec<f64>,
    /// ∂L/∂ξ_i, one entry per objective.
    pub d_xi: Vec<f64>,
}

/// Optimal weights w*_b for every sample of the batch.
pub fn batch_weights(batch: &TdBatch, pref: &PreferenceVector, hp: &HyperParams) -> Result<Vec<f64>> {
    if pref.len() != batch.num_objectives() {
        return Err(FairdiceError::shape(format!(
            "preference has {} objectives but batch has {}",
            pref.len(),
            batch.num_objectives()
        )));
    }
    let mut w = Vec::with_capacity(batch.len());
    for b in 0..batch.len() {
        let e = td_error(
            pref.mu(),
            batch.reward_row(b),
            batch.nu_s[b],
            batch.nu_s_next[b],
            hp.gamma,
            batch.terminal[b],
        )?;
        w.push(w_star(e, hp.beta));
    }
    Ok(w)
}

/// Critic loss value; see the module docs for the formula.
pub fn critic_mu_loss(batch: &TdBatch, pref: &PreferenceVector, hp: &HyperParams) -> Result<f64> {
    let (loss, _) = critic_mu_loss_with_grads(batch, pref, hp)?;
    Ok(loss)
}

/// Critic loss together with its analytic gradients.
///
/// The data term is averaged over the batch; the regulariser is a sum over
/// objectives.  Errors on shape mismatch, domain violations in the utility,
/// or a non-finite total.
pub fn critic_mu_loss_with_grads(
    batch: &TdBatch,
    pref: &PreferenceVector,
    hp: &HyperParams,
) -> Result<(f64, CriticGrads)> {
    hp.validate()?;
    let k_obj = batch.num_objectives();
    if pref.len() != k_obj {
        return Err(FairdiceError::shape(format!(
            "preference has {} objectives but batch has {}",
            pref.len(),
            k_obj
        )));
    }
    let b_size = batch.len();
    let inv_b = 1.0 / b_size as f64;
    let mu = pref.mu();

    let mut loss = 0.0;
    let mut d_nu_s = vec![0.0; b_size];
    let mut d_nu_s_next = vec![0.0; b_size];
    let mut d_nu_s_init = vec![0.0; b_size];
    // Data-term μ gradient: mean_b w*_b r_{b,i}, accumulated then scaled.
    let mut d_mu_data = vec![0.0; k_obj];

    for b in 0..b_size {
        let r = batch.reward_row(b);
        let e = td_error(mu, r, batch.nu_s[b], batch.nu_s_next[b], hp.gamma, batch.terminal[b])?;
        let w = w_star(e, hp.beta);
        let f_w = soft_chi2_f(w)?;
        loss += inv_b * ((1.0 - hp.gamma) * batch.nu_s_init[b] + w * e - hp.beta * f_w);

        // Envelope theorem: d(w e − β f(w))/de = w, so cotangents scale by w.
        d_nu_s[b] = -inv_b * w;
        d_nu_s_next[b] = if batch.terminal[b] {
            0.0
        } else {
            inv_b * hp.gamma * w
        };
        d_nu_s_init[b] = inv_b * (1.0 - hp.gamma);
        for (acc, &ri) in d_mu_data.iter_mut().zip(r) {
            *acc += w * ri;
        }
    }

    loss += regularizer_term(pref, hp)?;
    let reg_grad = regularizer_grad_xi(pref, hp)?;
    let freeze_xi = !regularizer_active(hp);
    let d_xi: Vec<f64> = if freeze_xi {
        // Utilitarian limit: μ is pinned (conventionally at 1), not trained.
        vec![0.0; k_obj]
    } else {
        // Chain rule through μ = exp(ξ): ∂/∂ξ_i = μ_i ∂/∂μ_i.
        (0..k_obj)
            .map(|i| mu[i] * d_mu_data[i] * inv_b + reg_grad[i])
            .collect()
    };

    if !loss.is_finite() {
        return Err(FairdiceError::NonFinite {
            iteration: 0,
            what: format!("critic loss = {loss}"),
        });
    }
    Ok((
        loss,
        CriticGrads {
            d_nu_s,
            d_nu_s_next,
            d_nu_s_init,
            d_xi,
        },
    ))
}

// ---------------------------------------------------------------------------
// Policy losses
// ---------------------------------------------------------------------------

/// Result of a policy-loss evaluation: value, cotangents on the per-sample
/// log-probabilities, and whether an all-zero weight vector forced the
/// uniform-weight fallback.
#[derive(Debug, Clone)]
pub struct PolicyLossOutput {
    pub loss: f64,
    pub grad_log_probs: Vec<f64>,
    pub uniform_fallback: bool,
}

/// Scales non-negative weights to batch mean one.
///
/// An all-zero vector cannot be normalised; the uniform vector is returned
/// with the fallback flag set.  Negative or non-finite weights are an error.
pub fn normalize_weights_mean_one(w: &[f64]) -> Result<(Vec<f64>, bool)> {
    if w.is_empty() {
        return Err(FairdiceError::shape("cannot normalise an empty weight vector"));
    }
    for &wi in w {
        if !wi.is_finite() || wi < 0.0 {
            return Err(FairdiceError::domain(format!(
                "weights must be finite and >= 0, got {wi}"
            )));
        }
    }
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    if mean == 0.0 {
        return Ok((vec![1.0; w.len()], true));
    }
    Ok((w.iter().map(|wi| wi / mean).collect(), false))
}

fn check_policy_shapes(log_probs: &[f64], w: &[f64], terminal: &[bool]) -> Result<()> {
    if log_probs.is_empty() {
        return Err(FairdiceError::shape("empty policy-loss batch"));
    }
    if log_probs.len() != w.len() || log_probs.len() != terminal.len() {
        return Err(FairdiceError::shape(format!(
            "policy loss lengths disagree: log_probs {}, weights {}, terminal {}",
            log_probs.len(),
            w.len(),
            terminal.len()
        )));
    }
    Ok(())
}

/// Weighted behavioural cloning: −mean_b m_b w̃_b log π(a_b|s_b), where m
/// masks out terminal transitions and w̃ has batch mean one.
pub fn policy_loss_weighted(
    log_probs: &[f64],
    w: &[f64],
    terminal: &[bool],
) -> Result<PolicyLossOutput> {
    check_policy_shapes(log_probs, w, terminal)?;
    let (w_norm, uniform_fallback) = normalize_weights_mean_one(w)?;
    let b = log_probs.len();
    let inv_b = 1.0 / b as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; b];
    for i in 0..b {
        let m = if terminal[i] { 0.0 } else { 1.0 };
        loss -= inv_b * m * w_norm[i] * log_probs[i];
        grad[i] = -inv_b * m * w_norm[i];
    }
    Ok(PolicyLossOutput {
        loss,
        grad_log_probs: grad,
        uniform_fallback,
    })
}

/// Faulty outer-product cloning loss: −(1/B) (Σ_i m_i w̃_i) (Σ_j log π_j).
///
/// Summing a `[B]` weight row against a `[B, 1]` log-probability column and
/// averaging couples every weight with every sample, i.e. the `[B, B]` outer
/// product is reduced in both axes.  The mask rides on the weight side only,
/// so masked samples still contribute through the log-probability sum.  The
/// gradient w.r.t. each log π_j is the same constant, which makes the update
/// direction identical to unweighted cloning.
pub fn policy_loss_buggy_outer(
    log_probs: &[f64],
    w: &[f64],
    terminal: &[bool],
) -> Result<PolicyLossOutput> {
    check_policy_shapes(log_probs, w, terminal)?;
    let (w_norm, uniform_fallback) = normalize_weights_mean_one(w)?;
    let b = log_probs.len();
    let inv_b = 1.0 / b as f64;
    let masked_weight_sum: f64 = w_norm
        .iter()
        .zip(terminal)
        .map(|(wi, &t)| if t { 0.0 } else { *wi })
        .sum();
    let log_prob_sum: f64 = log_probs.iter().sum();
    let loss = -inv_b * masked_weight_sum * log_prob_sum;
    let per_sample = -inv_b * masked_weight_sum;
    Ok(PolicyLossOutput {
        loss,
        grad_log_probs: vec![per_sample; b],
        uniform_fallback,
    })
}

// ---------------------------------------------------------------------------
// Gradient penalty
// ---------------------------------------------------------------------------

/// Input-gradient penalty λ Σ_b max{0, ‖∇ν‖_b − 5}² from per-sample norms.
pub fn gradient_penalty(norms: &[f64], hp: &HyperParams) -> f64 {
    norms
        .iter()
        .map(|&n| {
            let excess = (n - GP_NORM_THRESHOLD).max(0.0);
            hp.lambda_gp * excess * excess
        })
        .sum()
}

/// [`gradient_penalty`] together with d(penalty)/d(norm_b) = 2λ max{0, n−5}.
pub fn gradient_penalty_with_grad(norms: &[f64], hp: &HyperParams) -> (f64, Vec<f64>) {
    let mut total = 0.0;
    let grad = norms
        .iter()
        .map(|&n| {
            let excess = (n - GP_NORM_THRESHOLD).max(0.0);
            total += hp.lambda_gp * excess * excess;
            2.0 * hp.lambda_gp * excess
        })
        .collect();
    (total, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn hp(alpha: f64, beta: f64, gamma: f64) -> HyperParams {
        HyperParams::new(alpha, beta, gamma).unwrap()
    }

    // -- divergence kernel --------------------------------------------------

    #[test]
    fn f_at_one_is_zero() {
        assert_eq!(soft_chi2_f(1.0).unwrap(), 0.0);
    }

    #[test]
    fn f_quadratic_branch() {
        assert_eq!(soft_chi2_f(2.0).unwrap(), 0.5);
    }

    #[test]
    fn f_entropy_branch() {
        // 0.5 ln 0.5 − 0.5 + 1
        assert_relative_eq!(soft_chi2_f(0.5).unwrap(), 0.1534264097200273, max_relative = 1e-12);
    }

    #[test]
    fn f_at_zero_is_one() {
        assert_eq!(soft_chi2_f(0.0).unwrap(), 1.0);
    }

    #[test]
    fn f_rejects_negative() {
        assert!(soft_chi2_f(-0.1).is_err());
    }

    #[test]
    fn f_prime_continuous_at_one() {
        // ln w → 0 and w − 1 → 0 as w → 1 from either side.
        let below = soft_chi2_f_prime(1.0 - 1e-9).unwrap();
        let above = soft_chi2_f_prime(1.0 + 1e-9).unwrap();
        assert!(below.abs() < 2e-9 && above.abs() < 2e-9);
        assert_eq!(soft_chi2_f_prime(1.0).unwrap(), 0.0);
    }

    #[test]
    fn f_is_convex_on_grid() {
        // Positive second differences across the branch point.
        let h = 1e-3;
        let mut w = 0.05;
        while w < 3.0 {
            let a = soft_chi2_f(w - h).unwrap();
            let b = soft_chi2_f(w).unwrap();
            let c = soft_chi2_f(w + h).unwrap();
            assert!(a - 2.0 * b + c >= -1e-12, "non-convex at w = {w}");
            w += 0.01;
        }
    }

    #[test]
    fn f_prime_inverse_known_points() {
        assert_eq!(f_prime_inverse(0.0), 1.0);
        assert_eq!(f_prime_inverse(1.0), 2.0);
        assert_relative_eq!(f_prime_inverse(-1.0), 0.36787944117144233, max_relative = 1e-15);
    }

    /// Independent bisection inverse of f′ used to cross-check the closed form.
    fn f_prime_inverse_bisect(y: f64) -> f64 {
        let (mut lo, mut hi) = (1e-300, 1e6);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if soft_chi2_f_prime(mid).unwrap() < y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn f_prime_inverse_matches_bisection() {
        for y in [-5.0, -1.0, -0.3, 0.0, 0.4, 1.0, 7.5] {
            let closed = f_prime_inverse(y);
            let bisected = f_prime_inverse_bisect(y);
            assert_relative_eq!(closed, bisected, max_relative = 1e-9);
        }
    }

    #[test]
    fn f_prime_round_trip() {
        for y in [-20.0, -3.0, -0.5, 0.0, 0.25, 2.0, 50.0] {
            let w = f_prime_inverse(y);
            assert_relative_eq!(soft_chi2_f_prime(w).unwrap(), y, epsilon = 1e-10);
        }
    }

    // -- TD error and weights ----------------------------------------------

    #[test]
    fn td_error_worked_example() {
        // 1·1 + 0.5·0 + 0.9·2 − 1.32 = 1.48
        let e = td_error(&[1.0, 0.5], &[1.0, 0.0], 1.32, 2.0, 0.9, false).unwrap();
        assert_relative_eq!(e, 1.48, max_relative = 1e-12);
    }

    #[test]
    fn td_error_terminal_drops_bootstrap() {
        let e = td_error(&[1.0], &[1.0], 1.0, 99.0, 0.9, true).unwrap();
        assert_eq!(e, 0.0);
    }

    #[test]
    fn td_error_zero_everything() {
        let e = td_error(&[1.0, 1.0], &[0.0, 1.0], 0.0, 0.0, 0.9, false).unwrap();
        assert_eq!(e, 1.0);
    }

    #[test]
    fn td_error_rejects_mismatch() {
        assert!(td_error(&[1.0, 1.0], &[1.0], 0.0, 0.0, 0.9, false).is_err());
    }

    #[test]
    fn w_star_known_points() {
        assert_eq!(w_star(0.0, 1.0), 1.0);
        assert_eq!(w_star(1.0, 1.0), 2.0);
        // Large β keeps w* within e/β of 1 on the linear branch.
        let w = w_star(1.0, 1000.0);
        assert_relative_eq!(w, 1.001, max_relative = 1e-12);
        assert!((w - 1.0).abs() <= 2.0 * 1.0 / 1000.0);
    }

    #[test]
    fn w_star_beta_limit_from_below() {
        // Negative e: w* = exp(e/β) → 1 from below as β grows.
        let w = w_star(-1.0, 1000.0);
        assert!((w - 1.0).abs() <= 2.0 / 1000.0);
    }

    proptest! {
        #[test]
        fn w_star_nonnegative_and_monotone(
            e1 in -50.0..50.0f64,
            e2 in -50.0..50.0f64,
            beta in 1e-3..1e3f64,
        ) {
            let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            let w_lo = w_star(lo, beta);
            let w_hi = w_star(hi, beta);
            prop_assert!(w_lo >= 0.0);
            prop_assert!(w_hi >= w_lo);
        }

        #[test]
        fn w_star_approaches_one_in_beta(e in -10.0..10.0f64, b in 1.0..100.0f64) {
            // |w* − 1| shrinks when β doubles.
            let near = (w_star(e, 2.0 * b) - 1.0).abs();
            let far = (w_star(e, b) - 1.0).abs();
            prop_assert!(near <= far + 1e-15);
        }

        #[test]
        fn normalized_weights_have_mean_one(w in proptest::collection::vec(0.0..10.0f64, 1..64)) {
            let total: f64 = w.iter().sum();
            prop_assume!(total > 1e-9);
            let (norm, fallback) = normalize_weights_mean_one(&w).unwrap();
            prop_assert!(!fallback);
            let mean = norm.iter().sum::<f64>() / norm.len() as f64;
            prop_assert!((mean - 1.0).abs() < 1e-9);
        }
    }

    // -- utilities ----------------------------------------------------------

    #[test]
    fn utility_alpha_zero_is_identity() {
        let h = hp(0.0, 1.0, 0.99);
        assert_eq!(utility(3.5, &h).unwrap(), 3.5);
    }

    #[test]
    fn utility_alpha_one_is_log() {
        let h = hp(1.0, 1.0, 0.99);
        assert_relative_eq!(utility(2.0, &h).unwrap(), std::f64::consts::LN_2, max_relative = 1e-15);
    }

    #[test]
    fn k_star_log_case() {
        let h = hp(1.0, 1.0, 0.99);
        assert_eq!(k_star(0.25, &h).unwrap(), 4.0);
    }

    #[test]
    fn k_star_alpha_two() {
        let h = hp(2.0, 1.0, 0.99);
        assert_eq!(k_star(4.0, &h).unwrap(), 0.5);
    }

    #[test]
    fn k_star_rejects_nonpositive_mu() {
        let h = hp(1.0, 1.0, 0.99);
        assert!(k_star(0.0, &h).is_err());
        assert!(k_star(-1.0, &h).is_err());
    }

    #[test]
    fn k_star_undefined_at_alpha_zero() {
        let h = hp(0.0, 1.0, 0.99);
        assert!(k_star(1.0, &h).is_err());
    }

    #[test]
    fn piecewise_log_is_c1_at_one() {
        let h = hp(1.0, 1.0, 0.99).with_utility_kind(UtilityKind::PiecewiseLog);
        // Value: ln 1 = 0 and −½(1−2)² + ½ = 0.
        assert_eq!(utility(1.0, &h).unwrap(), 0.0);
        assert_eq!(-0.5f64 * (1.0 - 2.0) * (1.0 - 2.0) + 0.5, 0.0);
        // Derivative: 1/1 = 1 and 2 − 1 = 1.
        assert_eq!(utility_prime(1.0, &h).unwrap(), 1.0);
        assert_eq!(2.0 - 1.0, utility_prime(1.0 - f64::EPSILON, &h).unwrap().round());
        let below = utility_prime(1.0 - 1e-9, &h).unwrap();
        assert!((below - 1.0).abs() < 2e-9);
    }

    #[test]
    fn piecewise_log_k_star_branches() {
        let h = hp(1.0, 1.0, 0.99).with_utility_kind(UtilityKind::PiecewiseLog);
        assert_eq!(k_star(0.5, &h).unwrap(), 2.0);
        assert_eq!(k_star(1.5, &h).unwrap(), 0.5);
    }

    #[test]
    fn u_prime_of_k_star_recovers_mu() {
        // First-order condition of the conjugate: u′(k*(μ)) = μ.
        let kinds = [
            (UtilityKind::AlphaFair, 0.5),
            (UtilityKind::AlphaFair, 1.0),
            (UtilityKind::AlphaFair, 1.25),
            (UtilityKind::AlphaFair, 2.0),
            (UtilityKind::PiecewiseLog, 1.0),
        ];
        for (kind, alpha) in kinds {
            let h = hp(alpha, 1.0, 0.99).with_utility_kind(kind);
            let mut mu = 0.05;
            while mu <= 10.0 {
                let k = k_star(mu, &h).unwrap();
                if kind == UtilityKind::PiecewiseLog && k < 0.0 {
                    // μ > 2 puts k* below zero where the quadratic branch
                    // still satisfies the condition.
                    assert_relative_eq!(utility_prime(k, &h).unwrap(), mu, epsilon = 1e-12);
                } else {
                    assert_relative_eq!(utility_prime(k, &h).unwrap(), mu, epsilon = 1e-12, max_relative = 1e-12);
                }
                mu += 0.05;
            }
        }
    }

    // -- critic loss --------------------------------------------------------

    fn single_transition_batch() -> TdBatch {
        TdBatch::new(vec![0.0], vec![0.0], vec![0.0], vec![0.0], vec![false], 1).unwrap()
    }

    #[test]
    fn critic_loss_zero_fixture() {
        // ν ≡ 0, r = 0, μ = 1, α = 1, β = 1:
        //   data term: (1−γ)·0 + w*(0)·0 − f(1) = 0
        //   regulariser: u(k*) − μ k* = ln(1) − 1 = −1.
        let h = hp(1.0, 1.0, 0.9);
        let pref = PreferenceVector::uniform(1);
        let loss = critic_mu_loss(&single_transition_batch(), &pref, &h).unwrap();
        assert_relative_eq!(loss, -1.0, max_relative = 1e-12);
    }

    #[test]
    fn critic_loss_flipped_sign_negates_regulariser() {
        let h = hp(1.0, 1.0, 0.9).with_regularizer_sign(RegularizerSign::FlippedForTypoTest);
        let pref = PreferenceVector::uniform(1);
        let loss = critic_mu_loss(&single_transition_batch(), &pref, &h).unwrap();
        assert_relative_eq!(loss, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn critic_middle_term_approaches_td_error_at_large_beta() {
        // As β → ∞, w* → 1 and β f(w*) → 0, so w* e − β f(w*) → e.
        let h = hp(1.0, 1e6, 0.9);
        let pref = PreferenceVector::uniform(1);
        // ν(s) = 0.2, ν(s′) = 1.0, r = 0.5 → e = 0.5 + 0.9·1.0 − 0.2 = 1.2.
        let batch =
            TdBatch::new(vec![0.2], vec![1.0], vec![0.0], vec![0.5], vec![false], 1).unwrap();
        let loss = critic_mu_loss(&batch, &pref, &h).unwrap();
        let reg = regularizer_term(&pref, &h).unwrap();
        let middle = loss - reg; // nu_s_init = 0 kills the first term
        assert!((middle - 1.2).abs() < 1e-3, "middle term {middle}");
    }

    /// Straight-line reference critic loss written independently of the
    /// production path: explicit loops, no shared helpers.
    fn critic_loss_reference(batch: &TdBatch, pref: &PreferenceVector, h: &HyperParams) -> f64 {
        let b = batch.len();
        let mut total = 0.0;
        for i in 0..b {
            let mut e = -batch.nu_s[i];
            if !batch.terminal[i] {
                e += h.gamma * batch.nu_s_next[i];
            }
            for (k, &mu_k) in pref.mu().iter().enumerate() {
                e += mu_k * batch.reward_row(i)[k];
            }
            let y = e / h.beta;
            let w = if y < 0.0 { y.exp() } else { y + 1.0 };
            let f = if w < 1.0 {
                w * w.ln() - w + 1.0
            } else {
                0.5 * (w - 1.0) * (w - 1.0)
            };
            total += (1.0 - h.gamma) * batch.nu_s_init[i] + w * e - h.beta * f;
        }
        total /= b as f64;
        for &mu_k in pref.mu() {
            let k = 1.0 / mu_k; // alpha = 1
            total += h.regularizer_sign.factor() * (k.ln() - mu_k * k);
        }
        total
    }

    #[test]
    fn critic_loss_matches_independent_reference() {
        let h = hp(1.0, 0.5, 0.95);
        let pref = PreferenceVector::from_xi(vec![0.3, -0.2]);
        let batch = TdBatch::new(
            vec![0.1, -0.4, 0.7, 0.0, 1.2, -0.3, 0.5, 0.9],
            vec![0.2, 0.0, -0.5, 0.3, 0.8, 0.1, -0.2, 0.4],
            vec![0.0, 0.0, 0.1, 0.1, -0.2, -0.2, 0.3, 0.3],
            vec![
                1.0, 0.0, 0.0, 1.0, 0.5, 0.5, 0.2, 0.8, 0.0, 0.0, 1.0, 1.0, 0.3, 0.3, 0.9, 0.1,
            ],
            vec![false, false, true, false, false, true, false, false],
            2,
        )
        .unwrap();
        let loss = critic_mu_loss(&batch, &pref, &h).unwrap();
        let reference = critic_loss_reference(&batch, &pref, &h);
        assert_relative_eq!(loss, reference, max_relative = 1e-12);
    }

    #[test]
    fn critic_grads_match_finite_differences() {
        let h = hp(1.25, 0.7, 0.95);
        let pref = PreferenceVector::from_xi(vec![0.1, -0.3]);
        let nu_s = vec![0.15, -0.2, 0.6, 0.05];
        let nu_next = vec![0.3, 0.1, -0.4, 0.2];
        let nu_init = vec![0.0, 0.05, 0.05, 0.0];
        let rewards = vec![0.9, 0.1, 0.2, 0.8, 0.5, 0.5, 0.0, 1.0];
        let terminal = vec![false, true, false, false];
        let make = |s: &[f64], n: &[f64], i: &[f64]| {
            TdBatch::new(s.to_vec(), n.to_vec(), i.to_vec(), rewards.clone(), terminal.clone(), 2)
                .unwrap()
        };
        let batch = make(&nu_s, &nu_next, &nu_init);
        let (_, grads) = critic_mu_loss_with_grads(&batch, &pref, &h).unwrap();

        let step = 1e-6;
        for b in 0..nu_s.len() {
            // ν(s)
            let mut hi = nu_s.clone();
            let mut lo = nu_s.clone();
            hi[b] += step;
            lo[b] -= step;
            let fd = (critic_mu_loss(&make(&hi, &nu_next, &nu_init), &pref, &h).unwrap()
                - critic_mu_loss(&make(&lo, &nu_next, &nu_init), &pref, &h).unwrap())
                / (2.0 * step);
            assert_relative_eq!(grads.d_nu_s[b], fd, epsilon = 1e-7, max_relative = 1e-4);
            // ν(s′)
            let mut hi = nu_next.clone();
            let mut lo = nu_next.clone();
            hi[b] += step;
            lo[b] -= step;
            let fd = (critic_mu_loss(&make(&nu_s, &hi, &nu_init), &pref, &h).unwrap()
                - critic_mu_loss(&make(&nu_s, &lo, &nu_init), &pref, &h).unwrap())
                / (2.0 * step);
            assert_relative_eq!(grads.d_nu_s_next[b], fd, epsilon = 1e-7, max_relative = 1e-4);
            // ν(ṡ)
            let mut hi = nu_init.clone();
            let mut lo = nu_init.clone();
            hi[b] += step;
            lo[b] -= step;
            let fd = (critic_mu_loss(&make(&nu_s, &nu_next, &hi), &pref, &h).unwrap()
                - critic_mu_loss(&make(&nu_s, &nu_next, &lo), &pref, &h).unwrap())
                / (2.0 * step);
            assert_relative_eq!(grads.d_nu_s_init[b], fd, epsilon = 1e-7, max_relative = 1e-4);
        }
        // ξ
        for i in 0..pref.len() {
            let mut hi = pref.xi().to_vec();
            let mut lo = pref.xi().to_vec();
            hi[i] += step;
            lo[i] -= step;
            let fd = (critic_mu_loss(&batch, &PreferenceVector::from_xi(hi), &h).unwrap()
                - critic_mu_loss(&batch, &PreferenceVector::from_xi(lo), &h).unwrap())
                / (2.0 * step);
            assert_relative_eq!(grads.d_xi[i], fd, epsilon = 1e-7, max_relative = 1e-4);
        }
    }

    #[test]
    fn critic_grads_flipped_sign_only_changes_regulariser() {
        let h_ok = hp(1.0, 1.0, 0.9);
        let h_flip = hp(1.0, 1.0, 0.9).with_regularizer_sign(RegularizerSign::FlippedForTypoTest);
        let pref = PreferenceVector::from_xi(vec![0.4]);
        let batch = single_transition_batch();
        let (_, g_ok) = critic_mu_loss_with_grads(&batch, &pref, &h_ok).unwrap();
        let (_, g_flip) = critic_mu_loss_with_grads(&batch, &pref, &h_flip).unwrap();
        assert_eq!(g_ok.d_nu_s, g_flip.d_nu_s);
        let reg = regularizer_grad_xi(&pref, &h_ok).unwrap();
        assert_relative_eq!(g_flip.d_xi[0] - g_ok.d_xi[0], -2.0 * reg[0], max_relative = 1e-12);
    }

    #[test]
    fn critic_alpha_zero_freezes_xi() {
        let h = hp(0.0, 1.0, 0.9);
        let pref = PreferenceVector::uniform(1);
        let batch = TdBatch::new(vec![0.0], vec![0.5], vec![0.0], vec![1.0], vec![false], 1).unwrap();
        let (loss, grads) = critic_mu_loss_with_grads(&batch, &pref, &h).unwrap();
        assert!(loss.is_finite());
        assert_eq!(grads.d_xi, vec![0.0]);
        assert_eq!(regularizer_term(&pref, &h).unwrap(), 0.0);
    }

    // -- policy losses ------------------------------------------------------

    #[test]
    fn normalize_example() {
        let (w, fallback) = normalize_weights_mean_one(&[2.0, 4.0, 6.0]).unwrap();
        assert_eq!(w, vec![0.5, 1.0, 1.5]);
        assert!(!fallback);
    }

    #[test]
    fn normalize_all_zero_falls_back_to_uniform() {
        let (w, fallback) = normalize_weights_mean_one(&[0.0, 0.0]).unwrap();
        assert_eq!(w, vec![1.0, 1.0]);
        assert!(fallback);
    }

    #[test]
    fn weighted_loss_equal_weights_is_plain_cloning() {
        let lp = [-0.5, -1.5, -0.25];
        let mask = [false, false, false];
        let out = policy_loss_weighted(&lp, &[3.0, 3.0, 3.0], &mask).unwrap();
        let bc = -(lp.iter().sum::<f64>()) / 3.0;
        assert_relative_eq!(out.loss, bc, max_relative = 1e-12);
    }

    #[test]
    fn weighted_loss_reference_batch() {
        // Straight-line oracle: −mean(m w̃ ℓ).
        let lp = [-0.2, -1.0, -0.7, -0.3];
        let w = [1.0, 3.0, 0.5, 1.5];
        let terminal = [false, false, true, false];
        let mean_w = (1.0 + 3.0 + 0.5 + 1.5) / 4.0;
        let wn: Vec<f64> = w.iter().map(|x| x / mean_w).collect();
        let expect = -(wn[0] * lp[0] + wn[1] * lp[1] + 0.0 + wn[3] * lp[3]) / 4.0;
        let out = policy_loss_weighted(&lp, &w, &terminal).unwrap();
        assert_relative_eq!(out.loss, expect, max_relative = 1e-12);
        assert_eq!(out.grad_log_probs[2], 0.0);
    }

    #[test]
    fn buggy_loss_two_sample_example() {
        // w̃ = [1, 1], ℓ = [−1, −2]: every (i, j) pair contributes, so the
        // doubly-reduced outer product is −6 over B² = 4 cells; scaling the
        // sum by 1/B gives 3, four times the correctly weighted loss 1.5.
        let lp = [-1.0, -2.0];
        let w = [1.0, 1.0];
        let mask = [false, false];
        let buggy = policy_loss_buggy_outer(&lp, &w, &mask).unwrap();
        assert_relative_eq!(buggy.loss, 3.0, max_relative = 1e-12);
        let weighted = policy_loss_weighted(&lp, &w, &mask).unwrap();
        assert_relative_eq!(weighted.loss, 1.5, max_relative = 1e-12);
    }

    #[test]
    fn buggy_gradient_is_constant_and_parallel_to_cloning() {
        let lp = [-1.0, -0.1, -2.5, -0.4];
        let w = [5.0, 0.1, 2.0, 0.9];
        let terminal = [false, true, false, false];
        let buggy = policy_loss_buggy_outer(&lp, &w, &terminal).unwrap();
        // One constant for every sample, terminal ones included.
        for g in &buggy.grad_log_probs {
            assert_relative_eq!(*g, buggy.grad_log_probs[0], max_relative = 1e-15);
        }
        // Plain cloning over all samples has gradient −1/B per sample, so the
        // cosine similarity with the buggy gradient is exactly one.
        let bc_grad = vec![-0.25; 4];
        let dot: f64 = buggy.grad_log_probs.iter().zip(&bc_grad).map(|(a, b)| a * b).sum();
        let na: f64 = buggy.grad_log_probs.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nb: f64 = bc_grad.iter().map(|b| b * b).sum::<f64>().sqrt();
        assert_relative_eq!(dot / (na * nb), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn buggy_mask_ignores_log_prob_side() {
        // Masked sample 1 still contributes its log-probability.
        let lp_a = [-1.0, -2.0];
        let lp_b = [-1.0, -7.0];
        let w = [1.0, 1.0];
        let terminal = [false, true];
        let a = policy_loss_buggy_outer(&lp_a, &w, &terminal).unwrap().loss;
        let b = policy_loss_buggy_outer(&lp_b, &w, &terminal).unwrap().loss;
        assert!((a - b).abs() > 1.0);
    }

    #[test]
    fn policy_loss_grads_match_finite_differences() {
        let lp = vec![-0.2, -1.0, -0.7, -0.3, -2.0];
        let w = vec![1.0, 3.0, 0.5, 1.5, 0.0];
        let terminal = vec![false, false, true, false, false];
        let step = 1e-6;
        for (name, f) in [
            ("weighted", policy_loss_weighted as fn(&[f64], &[f64], &[bool]) -> Result<PolicyLossOutput>),
            ("buggy", policy_loss_buggy_outer),
        ] {
            let out = f(&lp, &w, &terminal).unwrap();
            for i in 0..lp.len() {
                let mut hi = lp.clone();
                let mut lo = lp.clone();
                hi[i] += step;
                lo[i] -= step;
                let fd = (f(&hi, &w, &terminal).unwrap().loss - f(&lo, &w, &terminal).unwrap().loss)
                    / (2.0 * step);
                assert_relative_eq!(out.grad_log_probs[i], fd, epsilon = 1e-9, max_relative = 1e-6);
                let _ = name;
            }
        }
    }

    // -- gradient penalty ---------------------------------------------------

    #[test]
    fn penalty_inside_threshold_is_zero() {
        let h = hp(1.0, 1.0, 0.9).with_lambda_gp(0.1);
        assert_eq!(gradient_penalty(&[3.0], &h), 0.0);
    }

    #[test]
    fn penalty_above_threshold() {
        // 0.1 · (7 − 5)² = 0.4
        let h = hp(1.0, 1.0, 0.9).with_lambda_gp(0.1);
        assert_relative_eq!(gradient_penalty(&[7.0], &h), 0.4, max_relative = 1e-12);
    }

    #[test]
    fn penalty_disabled_at_lambda_zero() {
        let h = hp(1.0, 1.0, 0.9);
        assert_eq!(gradient_penalty(&[100.0], &h), 0.0);
    }

    #[test]
    fn penalty_grad_matches_finite_differences() {
        let h = hp(1.0, 1.0, 0.9).with_lambda_gp(0.25);
        let norms = [2.0, 5.5, 9.0];
        let (_, grad) = gradient_penalty_with_grad(&norms, &h);
        let step = 1e-6;
        for i in 0..norms.len() {
            let mut hi = norms;
            let mut lo = norms;
            hi[i] += step;
            lo[i] -= step;
            let fd = (gradient_penalty(&hi, &h) - gradient_penalty(&lo, &h)) / (2.0 * step);
            assert_relative_eq!(grad[i], fd, epsilon = 1e-8, max_relative = 1e-5);
        }
    }

    // -- hyper-parameter validation -----------------------------------------

    #[test]
    fn hyperparams_validation() {
        assert!(HyperParams::new(-0.5, 1.0, 0.9).is_err());
        assert!(HyperParams::new(1.0, 0.0, 0.9).is_err());
        assert!(HyperParams::new(1.0, 1.0, 1.0).is_err());
        assert!(HyperParams::new(1.0, 1.0, -0.1).is_err());
        assert!(HyperParams::new(1.25, 1e-5, 0.99).is_ok());
    }
}
