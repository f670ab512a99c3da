//! Full-batch FairDICE for tabular domains.
//!
//! The critic here is one real number per state, so the loss can be taken
//! over the entire dataset at once.  Identical transitions are merged into
//! weighted groups first (any tabular dataset has at most |S|·|A|·|S| distinct
//! rows), which makes each full-batch gradient evaluation cheap regardless of
//! how many raw trajectories were collected.  The policy then follows in
//! closed form: weighted behaviour cloning over a finite state space is just
//! per-state normalisation of the accumulated w* mass.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, LrSchedule, Tensor};
use crate::data::{StateSpace, TransitionDataset};
use crate::env::{TabularMomdp, PROB_TOLERANCE};
use crate::error::{FairdiceError, Result};
use crate::losses::{
    self, soft_chi2_f, td_error, w_star, HyperParams, PreferenceVector,
};

/// State-indexed critic values ν(s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularCritic {
    pub nu: Vec<f64>,
}

/// A stochastic tabular policy: one action distribution per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    n_states: usize,
    n_actions: usize,
    /// Row-major `[n_states × n_actions]` probabilities.
    probs: Vec<f64>,
}

impl TabularPolicy {
    /// Validates that every row is a distribution within 1e−9.
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if n_states == 0 || n_actions == 0 || probs.len() != n_states * n_actions {
            return Err(FairdiceError::shape(format!(
                "policy table of {} entries does not match {n_states} x {n_actions}",
                probs.len()
            )));
        }
        for s in 0..n_states {
            let row = &probs[s * n_actions..(s + 1) * n_actions];
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| !(0.0..=1.0 + PROB_TOLERANCE).contains(&p))
                || (sum - 1.0).abs() > PROB_TOLERANCE
            {
                return Err(FairdiceError::domain(format!(
                    "policy row for state {s} is not a distribution (sum {sum})"
                )));
            }
        }
        Ok(TabularPolicy {
            n_states,
            n_actions,
            probs,
        })
    }

    /// The uniform policy.
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        TabularPolicy {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// The action distribution at state `s`.
    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// π(a|s).
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    /// Samples an action from the row at `s`.
    pub fn sample_action<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (a, &p) in self.row(s).iter().enumerate() {
            acc += p;
            if u < acc {
                return a;
            }
        }
        self.n_actions - 1
    }
}

// ---------------------------------------------------------------------------
// Dataset aggregation
// ---------------------------------------------------------------------------

/// One merged transition group with its empirical probability mass.
#[derive(Debug, Clone)]
struct AggGroup {
    s: usize,
    a: usize,
    s_next: usize,
    done: bool,
    /// Fraction of the dataset landing in this group.
    weight: f64,
    /// Mean reward vector of the group (rewards are a function of s_next in
    /// goal-structured environments, so the mean is exact).
    rewards: Vec<f64>,
}

/// A dataset reduced to weighted transition groups plus the empirical
/// initial-state distribution.
#[derive(Debug, Clone)]
struct AggregatedData {
    groups: Vec<AggGroup>,
    /// (state, empirical probability) pairs of trajectory-initial states.
    init: Vec<(usize, f64)>,
    n_states: usize,
    num_objectives: usize,
}

fn aggregate(dataset: &TransitionDataset) -> Result<AggregatedData> {
    let meta = dataset.meta();
    let n_states = match meta.state_space {
        StateSpace::Tabular(n) => n,
        StateSpace::Vector(_) => {
            return Err(FairdiceError::config(
                "the tabular solver needs an index-state dataset",
            ))
        }
    };
    let n = dataset.len() as f64;
    let mut groups: BTreeMap<(usize, usize, usize, bool), (usize, Vec<f64>)> = BTreeMap::new();
    let mut init: BTreeMap<usize, usize> = BTreeMap::new();
    for t in dataset.transitions() {
        let key = (t.state.as_index()?, t.action, t.next_state.as_index()?, t.done);
        let entry = groups
            .entry(key)
            .or_insert_with(|| (0, vec![0.0; meta.num_objectives]));
        entry.0 += 1;
        for (acc, &r) in entry.1.iter_mut().zip(&t.rewards) {
            *acc += r;
        }
        *init.entry(t.initial_state.as_index()?).or_insert(0) += 1;
    }
    let groups = groups
        .into_iter()
        .map(|((s, a, s_next, done), (count, reward_sum))| AggGroup {
            s,
            a,
            s_next,
            done,
            weight: count as f64 / n,
            rewards: reward_sum.iter().map(|r| r / count as f64).collect(),
        })
        .collect();
    let init = init
        .into_iter()
        .map(|(s, count)| (s, count as f64 / n))
        .collect();
    Ok(AggregatedData {
        groups,
        init,
        n_states,
        num_objectives: meta.num_objectives,
    })
}

/// Full-dataset critic loss with gradients w.r.t. every ν(s) and ξ_i.
///
/// Mirrors the per-sample minibatch loss exactly (equality is pinned by a
/// test); the only difference is that identical samples are folded into
/// weighted groups.
fn aggregated_loss(
    agg: &AggregatedData,
    nu: &[f64],
    pref: &PreferenceVector,
    hp: &HyperParams,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let mu = pref.mu();
    let mut loss = 0.0;
    let mut d_nu = vec![0.0; agg.n_states];
    let mut d_mu_data = vec![0.0; agg.num_objectives];

    for &(s, q0) in &agg.init {
        loss += (1.0 - hp.gamma) * q0 * nu[s];
        d_nu[s] += (1.0 - hp.gamma) * q0;
    }
    for g in &agg.groups {
        let e = td_error(mu, &g.rewards, nu[g.s], nu[g.s_next], hp.gamma, g.done)?;
        let w = w_star(e, hp.beta);
        loss += g.weight * (w * e - hp.beta * soft_chi2_f(w)?);
        // Envelope theorem: the inner maximiser w* makes d(w e − β f)/de = w.
        d_nu[g.s] -= g.weight * w;
        if !g.done {
            d_nu[g.s_next] += g.weight * hp.gamma * w;
        }
        for (acc, &ri) in d_mu_data.iter_mut().zip(&g.rewards) {
            *acc += g.weight * w * ri;
        }
    }

    loss += losses::regularizer_term(pref, hp)?;
    let d_xi = if losses::regularizer_active(hp) {
        let reg_grad = losses::regularizer_grad_xi(pref, hp)?;
        (0..agg.num_objectives)
            .map(|i| mu[i] * d_mu_data[i] + reg_grad[i])
            .collect()
    } else {
        // Utilitarian limit: μ is pinned at its initial value.
        vec![0.0; agg.num_objectives]
    };
    Ok((loss, d_nu, d_xi))
}

// ---------------------------------------------------------------------------
// Full-batch solve
// ---------------------------------------------------------------------------

/// Optimiser settings for the full-batch solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    /// Iteration cap.
    pub max_iters: usize,
    /// Adam step size.
    pub lr: f64,
    /// Stop once the full-batch gradient ∞-norm falls below this.
    pub grad_tolerance: f64,
    /// Learning-rate schedule.
    pub schedule: LrSchedule,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            max_iters: 50_000,
            lr: 3e-4,
            grad_tolerance: 1e-5,
            schedule: LrSchedule::Constant,
        }
    }
}

/// Per-iteration record of the solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    /// Full-batch loss at each iteration (before that iteration's step).
    pub loss: Vec<f64>,
    /// Smallest preference entry at each iteration.
    pub min_mu: Vec<f64>,
    /// Whether the gradient tolerance was reached before the iteration cap.
    pub converged: bool,
}

/// Output of [`solve_critic_full_batch`].
#[derive(Debug, Clone)]
pub struct TabularSolution {
    pub critic: TabularCritic,
    pub preference: PreferenceVector,
    pub trace: SolveTrace,
}

/// Optimises (ν, ξ) over the whole dataset with one Adam instance.
///
/// Starts from ν = 0, ξ = 0 (μ = 1) — the solve is deterministic, no RNG is
/// involved.  Errors with the iteration index if the loss leaves the finite
/// or positive-μ domain (which the flipped regulariser sign eventually does).
pub fn solve_critic_full_batch(
    dataset: &TransitionDataset,
    hp: &HyperParams,
    cfg: &SolveConfig,
) -> Result<TabularSolution> {
    hp.validate()?;
    if cfg.max_iters == 0 {
        return Err(FairdiceError::config("max_iters must be >= 1"));
    }
    let meta = dataset.meta();
    if (hp.gamma - meta.gamma).abs() > 1e-12 {
        return Err(FairdiceError::config(format!(
            "hyper-parameter gamma {} disagrees with the dataset's {}",
            hp.gamma, meta.gamma
        )));
    }
    let agg = aggregate(dataset)?;
    let mut nu = Tensor::zeros(vec![agg.n_states]);
    let mut xi = Tensor::zeros(vec![agg.num_objectives]);
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            schedule: cfg.schedule,
            ..AdamConfig::default()
        },
        &[agg.n_states, agg.num_objectives],
    );

    let mut trace = SolveTrace {
        loss: Vec::with_capacity(cfg.max_iters),
        min_mu: Vec::with_capacity(cfg.max_iters),
        converged: false,
    };
    for iter in 0..cfg.max_iters {
        let pref = PreferenceVector::from_xi(xi.values().to_vec());
        let (loss, d_nu, d_xi) =
            aggregated_loss(&agg, nu.values(), &pref, hp).map_err(|e| match e {
                FairdiceError::Domain(what) | FairdiceError::NonFinite { what, .. } => {
                    FairdiceError::NonFinite {
                        iteration: iter,
                        what,
                    }
                }
                other => other,
            })?;
        if !loss.is_finite() {
            return Err(FairdiceError::NonFinite {
                iteration: iter,
                what: format!("tabular critic loss = {loss}"),
            });
        }
        trace.loss.push(loss);
        trace.min_mu.push(pref.min_mu());

        let grad_inf = d_nu
            .iter()
            .chain(d_xi.iter())
            .fold(0.0_f64, |m, g| m.max(g.abs()));
        if grad_inf < cfg.grad_tolerance {
            trace.converged = true;
            break;
        }
        nu.grad_mut().copy_from_slice(&d_nu);
        xi.grad_mut().copy_from_slice(&d_xi);
        adam.step_tensors(&mut [&mut nu, &mut xi])?;
    }

    Ok(TabularSolution {
        critic: TabularCritic {
            nu: nu.values().to_vec(),
        },
        preference: PreferenceVector::from_xi(xi.values().to_vec()),
        trace,
    })
}

// ---------------------------------------------------------------------------
// Policy extraction
// ---------------------------------------------------------------------------

/// Closed-form weighted behaviour cloning over a finite state space:
/// π(a|s) ∝ Σ over dataset transitions at (s, a) of w*.
///
/// States absent from the dataset — and states whose entire w* mass is zero —
/// fall back to the uniform row so that evaluation is total.
pub fn extract_policy(
    dataset: &TransitionDataset,
    critic: &TabularCritic,
    pref: &PreferenceVector,
    hp: &HyperParams,
) -> Result<TabularPolicy> {
    let meta = dataset.meta();
    let n_states = match meta.state_space {
        StateSpace::Tabular(n) => n,
        StateSpace::Vector(_) => {
            return Err(FairdiceError::config(
                "policy extraction needs an index-state dataset",
            ))
        }
    };
    if critic.nu.len() != n_states {
        return Err(FairdiceError::shape(format!(
            "critic has {} states, dataset {}",
            critic.nu.len(),
            n_states
        )));
    }
    let n_actions = meta.n_actions;
    let agg = aggregate(dataset)?;
    let mut mass = vec![0.0; n_states * n_actions];
    for g in &agg.groups {
        let e = td_error(pref.mu(), &g.rewards, critic.nu[g.s], critic.nu[g.s_next], hp.gamma, g.done)?;
        mass[g.s * n_actions + g.a] += g.weight * w_star(e, hp.beta);
    }
    let mut probs = vec![0.0; n_states * n_actions];
    for s in 0..n_states {
        let row = &mass[s * n_actions..(s + 1) * n_actions];
        let total: f64 = row.iter().sum();
        let out = &mut probs[s * n_actions..(s + 1) * n_actions];
        if total > 0.0 {
            for (p, &m) in out.iter_mut().zip(row) {
                *p = m / total;
            }
        } else {
            out.fill(1.0 / n_actions as f64);
        }
    }
    TabularPolicy::new(n_states, n_actions, probs)
}

/// Empirical conditional action frequencies of a dataset (the plain
/// behaviour-cloning policy); unseen states get uniform rows.
pub fn empirical_policy(dataset: &TransitionDataset) -> Result<TabularPolicy> {
    let meta = dataset.meta();
    let n_states = match meta.state_space {
        StateSpace::Tabular(n) => n,
        StateSpace::Vector(_) => {
            return Err(FairdiceError::config(
                "empirical policy needs an index-state dataset",
            ))
        }
    };
    let n_actions = meta.n_actions;
    let mut counts = vec![0.0; n_states * n_actions];
    for t in dataset.transitions() {
        counts[t.state.as_index()? * n_actions + t.action] += 1.0;
    }
    let mut probs = vec![0.0; n_states * n_actions];
    for s in 0..n_states {
        let row = &counts[s * n_actions..(s + 1) * n_actions];
        let total: f64 = row.iter().sum();
        let out = &mut probs[s * n_actions..(s + 1) * n_actions];
        if total > 0.0 {
            for (p, &c) in out.iter_mut().zip(row) {
                *p = c / total;
            }
        } else {
            out.fill(1.0 / n_actions as f64);
        }
    }
    TabularPolicy::new(n_states, n_actions, probs)
}

/// Empirical state-visit frequencies of a dataset (over source states).
pub fn state_visit_weights(dataset: &TransitionDataset) -> Result<Vec<f64>> {
    let n_states = match dataset.meta().state_space {
        StateSpace::Tabular(n) => n,
        StateSpace::Vector(_) => {
            return Err(FairdiceError::config(
                "state-visit weights need an index-state dataset",
            ))
        }
    };
    let mut weights = vec![0.0; n_states];
    for t in dataset.transitions() {
        weights[t.state.as_index()?] += 1.0;
    }
    let total: f64 = weights.iter().sum();
    Ok(weights.iter().map(|w| w / total).collect())
}

/// State-weighted total-variation distance between two policies:
/// Σ_s weight(s) · ½ Σ_a |p(a|s) − q(a|s)|.
pub fn policy_tv_distance(p: &TabularPolicy, q: &TabularPolicy, weights: &[f64]) -> Result<f64> {
    if p.n_states != q.n_states || p.n_actions != q.n_actions || weights.len() != p.n_states {
        return Err(FairdiceError::shape(
            "policy shapes and state weights must agree for a TV distance",
        ));
    }
    let mut tv = 0.0;
    for s in 0..p.n_states {
        let per_state: f64 = p
            .row(s)
            .iter()
            .zip(q.row(s))
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / 2.0;
        tv += weights[s] * per_state;
    }
    Ok(tv)
}

// ---------------------------------------------------------------------------
// Policy evaluation
// ---------------------------------------------------------------------------

/// Pairs the S·A size below which [`evaluate_tabular_policy`] solves exactly.
const EXACT_EVAL_LIMIT: usize = 10_000;

/// Discounted per-objective returns J_k of a policy, by the exact occupancy
/// linear solve: x = p0 + γ Pπᵀ x over non-terminal states, then
/// J_k = Σ_s x(s) Σ_a π(a|s) R_k(s, a).
pub fn evaluate_exact(env: &TabularMomdp, policy: &TabularPolicy) -> Result<Vec<f64>> {
    if policy.n_states != env.n_states() || policy.n_actions != env.n_actions() {
        return Err(FairdiceError::shape(
            "policy shape does not match the environment",
        ));
    }
    // Compact indexing over non-terminal states; flow into terminal states
    // simply leaves the system (they generate no further reward).
    let compact: Vec<Option<usize>> = {
        let mut next = 0;
        (0..env.n_states())
            .map(|s| {
                if env.is_terminal(s) {
                    None
                } else {
                    let i = next;
                    next += 1;
                    Some(i)
                }
            })
            .collect()
    };
    let n = compact.iter().flatten().count();
    // A = I − γ Pᵀ, column index = source state, row index = target state.
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        a[i * n + i] = 1.0;
    }
    let mut b = vec![0.0; n];
    for s in 0..env.n_states() {
        let Some(si) = compact[s] else { continue };
        b[si] = env.p0()[s];
        for act in 0..env.n_actions() {
            let pi = policy.prob(s, act);
            if pi == 0.0 {
                continue;
            }
            for &(s_next, p) in env.transition_row(s, act) {
                if let Some(ti) = compact[s_next] {
                    a[ti * n + si] -= env.gamma() * pi * p;
                }
            }
        }
    }
    let x = lu_solve(&mut a, n, &mut b)?;
    let mut j = vec![0.0; env.n_objectives()];
    for s in 0..env.n_states() {
        let Some(si) = compact[s] else { continue };
        for act in 0..env.n_actions() {
            let weight = x[si] * policy.prob(s, act);
            for (jk, &rk) in j.iter_mut().zip(env.expected_reward(s, act)) {
                *jk += weight * rk;
            }
        }
    }
    Ok(j)
}

/// Monte-Carlo policy evaluation: mean discounted returns plus per-objective
/// standard errors over `episodes` seeded rollouts of at most `horizon` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct McEval {
    pub returns: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub episodes: usize,
}

pub fn evaluate_monte_carlo(
    env: &TabularMomdp,
    policy: &TabularPolicy,
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<McEval> {
    if policy.n_states != env.n_states() || policy.n_actions != env.n_actions() {
        return Err(FairdiceError::shape(
            "policy shape does not match the environment",
        ));
    }
    if episodes == 0 || horizon == 0 {
        return Err(FairdiceError::config("need episodes >= 1 and horizon >= 1"));
    }
    let k = env.n_objectives();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = vec![0.0; k];
    let mut sum_sq = vec![0.0; k];
    for _ in 0..episodes {
        let mut s = env.sample_initial(&mut rng);
        let mut g = vec![0.0; k];
        let mut discount = 1.0;
        for _ in 0..horizon {
            if env.is_terminal(s) {
                break;
            }
            let a = policy.sample_action(s, &mut rng);
            let s_next = env.sample_next(s, a, &mut rng);
            for (gk, rk) in g.iter_mut().zip(env.arrival_reward(s_next)) {
                *gk += discount * rk;
            }
            discount *= env.gamma();
            s = s_next;
        }
        for i in 0..k {
            sum[i] += g[i];
            sum_sq[i] += g[i] * g[i];
        }
    }
    let n = episodes as f64;
    let returns: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std_errors = (0..k)
        .map(|i| {
            let var = (sum_sq[i] / n - returns[i] * returns[i]).max(0.0);
            (var / n).sqrt()
        })
        .collect();
    Ok(McEval {
        returns,
        std_errors,
        episodes,
    })
}

/// Exact evaluation when S·A ≤ 10⁴, Monte-Carlo (2000 episodes) otherwise.
pub fn evaluate_tabular_policy(env: &TabularMomdp, policy: &TabularPolicy) -> Result<Vec<f64>> {
    if env.n_states() * env.n_actions() <= EXACT_EVAL_LIMIT {
        evaluate_exact(env, policy)
    } else {
        // Horizon long enough that the truncated tail is below 1e−9.
        let horizon = ((1e-9_f64.ln() / env.gamma().ln()).ceil() as usize).max(1);
        Ok(evaluate_monte_carlo(env, policy, 2000, horizon, 0)?.returns)
    }
}

/// Solves `a x = b` (row-major `n × n`) by Gaussian elimination with partial
/// pivoting, in place.
fn lu_solve(a: &mut [f64], n: usize, b: &mut [f64]) -> Result<Vec<f64>> {
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().partial_cmp(&a[j * n + col].abs()).unwrap())
            .expect("nonempty pivot range");
        if a[pivot_row * n + col].abs() < 1e-300 {
            return Err(FairdiceError::domain(
                "singular occupancy system (is gamma < 1?)",
            ));
        }
        if pivot_row != col {
            for j in 0..n {
                a.swap(col * n + j, pivot_row * n + j);
            }
            b.swap(col, pivot_row);
        }
        let pivot = a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] / pivot;
            if factor == 0.0 {
                continue;
            }
            for j in col..n {
                a[row * n + j] -= factor * a[col * n + j];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for j in row + 1..n {
            acc -= a[row * n + j] * x[j];
        }
        x[row] = acc / a[row * n + row];
    }
    Ok(x)
}

// ---------------------------------------------------------------------------
// Artifact
// ---------------------------------------------------------------------------

/// A trained tabular run: critic, preferences and policy plus provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularArtifact {
    pub env_id: String,
    pub seed: u64,
    pub hp: HyperParams,
    pub nu: Vec<f64>,
    pub mu: Vec<f64>,
    pub policy: TabularPolicy,
    pub converged: bool,
    pub iterations_run: usize,
    pub final_loss: f64,
}

impl TabularArtifact {
    /// Assembles the artifact from a solve and its extracted policy.
    pub fn from_solution(
        env_id: impl Into<String>,
        seed: u64,
        hp: &HyperParams,
        solution: &TabularSolution,
        policy: TabularPolicy,
    ) -> Self {
        TabularArtifact {
            env_id: env_id.into(),
            seed,
            hp: hp.clone(),
            nu: solution.critic.nu.clone(),
            mu: solution.preference.mu().to_vec(),
            policy,
            converged: solution.trace.converged,
            iterations_run: solution.trace.loss.len(),
            final_loss: *solution.trace.loss.last().unwrap_or(&f64::NAN),
        }
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{
        collect_tabular, StateRepr, TabularBehavior, Transition,
    };
    use crate::env::build_four_rooms;
    use crate::losses::{critic_mu_loss_with_grads, RegularizerSign, TdBatch};
    use approx::assert_relative_eq;

    /// Deterministic n-state corridor ending in a single goal.
    fn chain(n_states: usize, gamma: f64) -> TabularMomdp {
        let goal = n_states - 1;
        let mut transitions = Vec::new();
        for s in 0..n_states {
            if s == goal {
                transitions.push(vec![]);
                transitions.push(vec![]);
            } else {
                transitions.push(vec![(0, 1.0)]); // retreat to start
                transitions.push(vec![(s + 1, 1.0)]); // advance
            }
        }
        let mut p0 = vec![0.0; n_states];
        p0[0] = 1.0;
        let mut goals = vec![None; n_states];
        goals[goal] = Some(0);
        TabularMomdp::from_goal_structure("chain", n_states, 2, 1, transitions, p0, gamma, goals)
            .unwrap()
    }

    fn always_advance(n_states: usize) -> TabularPolicy {
        let mut probs = vec![0.0; n_states * 2];
        for s in 0..n_states {
            probs[s * 2 + 1] = 1.0;
        }
        TabularPolicy::new(n_states, 2, probs).unwrap()
    }

    /// Hand-built two-transition dataset on a custom 3-state environment.
    fn handmade_dataset(transitions: Vec<Transition>, n_states: usize, gamma: f64) -> TransitionDataset {
        let k = transitions[0].rewards.len();
        TransitionDataset::from_transitions(
            "handmade",
            "handmade",
            0,
            gamma,
            StateSpace::Tabular(n_states),
            2,
            k,
            transitions.len(),
            transitions,
        )
        .unwrap()
    }

    #[test]
    fn aggregated_loss_matches_per_sample_reference() {
        // The aggregated full-batch loss must equal the per-sample minibatch
        // loss evaluated on the entire dataset, gradients included.
        let env = build_four_rooms();
        let ds = collect_tabular(&env, TabularBehavior::UniformRandom, 8, 120, 21).unwrap();
        let agg = aggregate(&ds).unwrap();
        let nu: Vec<f64> = (0..agg.n_states).map(|s| ((s * 37 % 11) as f64 - 5.0) * 0.13).collect();
        let pref = PreferenceVector::from_xi(vec![0.2, -0.4, 0.1]);
        let hp = HyperParams::new(1.0, 0.7, env.gamma()).unwrap();

        let (loss, d_nu, d_xi) = aggregated_loss(&agg, &nu, &pref, &hp).unwrap();

        let b = ds.len();
        let batch = TdBatch::new(
            ds.transitions().iter().map(|t| nu[t.state.as_index().unwrap()]).collect(),
            ds.transitions().iter().map(|t| nu[t.next_state.as_index().unwrap()]).collect(),
            ds.transitions().iter().map(|t| nu[t.initial_state.as_index().unwrap()]).collect(),
            ds.transitions().iter().flat_map(|t| t.rewards.clone()).collect(),
            ds.transitions().iter().map(|t| t.done).collect(),
            3,
        )
        .unwrap();
        let (ref_loss, ref_grads) = critic_mu_loss_with_grads(&batch, &pref, &hp).unwrap();
        assert_relative_eq!(loss, ref_loss, max_relative = 1e-12);
        for (i, gi) in d_xi.iter().enumerate() {
            assert_relative_eq!(*gi, ref_grads.d_xi[i], max_relative = 1e-10);
        }
        // Scatter the per-sample ν cotangents into state bins.
        let mut ref_d_nu = vec![0.0; agg.n_states];
        for (idx, t) in ds.transitions().iter().enumerate() {
            ref_d_nu[t.state.as_index().unwrap()] += ref_grads.d_nu_s[idx];
            ref_d_nu[t.next_state.as_index().unwrap()] += ref_grads.d_nu_s_next[idx];
            ref_d_nu[t.initial_state.as_index().unwrap()] += ref_grads.d_nu_s_init[idx];
        }
        for s in 0..agg.n_states {
            assert_relative_eq!(d_nu[s], ref_d_nu[s], max_relative = 1e-10, epsilon = 1e-14);
        }
        let _ = b;
    }

    #[test]
    fn single_transition_solve_reaches_stationarity() {
        // One transition, r = [1], gamma = 0: after the solve, central
        // finite differences of the full-batch loss vanish in every
        // coordinate, and u'(k*) = mu holds by construction of k*.
        let t = Transition {
            state: StateRepr::Index(0),
            action: 1,
            rewards: vec![1.0],
            next_state: StateRepr::Index(2),
            done: true,
            initial_state: StateRepr::Index(0),
            preference: None,
        };
        let ds = handmade_dataset(vec![t], 3, 0.0);
        let hp = HyperParams::new(1.0, 1.0, 0.0).unwrap();
        let cfg = SolveConfig {
            max_iters: 50_000,
            lr: 3e-3,
            grad_tolerance: 1e-9,
            ..SolveConfig::default()
        };
        let sol = solve_critic_full_batch(&ds, &hp, &cfg).unwrap();
        assert!(sol.trace.converged, "solve did not reach the gradient tolerance");

        let agg = aggregate(&ds).unwrap();
        let h = 1e-6;
        let loss_at = |nu0: f64, xi0: f64| -> f64 {
            let mut nu = sol.critic.nu.clone();
            nu[0] = nu0;
            let pref = PreferenceVector::from_xi(vec![xi0]);
            aggregated_loss(&agg, &nu, &pref, &hp).unwrap().0
        };
        let nu0 = sol.critic.nu[0];
        let xi0 = sol.preference.xi()[0];
        let fd_nu = (loss_at(nu0 + h, xi0) - loss_at(nu0 - h, xi0)) / (2.0 * h);
        let fd_xi = (loss_at(nu0, xi0 + h) - loss_at(nu0, xi0 - h)) / (2.0 * h);
        assert!(fd_nu.abs() < 1e-4, "d loss / d nu = {fd_nu}");
        assert!(fd_xi.abs() < 1e-4, "d loss / d xi = {fd_xi}");
    }

    #[test]
    fn huge_beta_recovers_empirical_frequencies() {
        // At beta = 1e6 every w* is within 1e-6 of 1, so weighted cloning
        // degenerates to the empirical conditional action frequencies.
        let env = build_four_rooms();
        let ds = collect_tabular(&env, TabularBehavior::UniformRandom, 30, 300, 4).unwrap();
        let hp = HyperParams::new(1.0, 1e6, env.gamma()).unwrap();
        let cfg = SolveConfig {
            max_iters: 500,
            ..SolveConfig::default()
        };
        let sol = solve_critic_full_batch(&ds, &hp, &cfg).unwrap();
        let policy = extract_policy(&ds, &sol.critic, &sol.preference, &hp).unwrap();
        let bc = empirical_policy(&ds).unwrap();
        let weights = state_visit_weights(&ds).unwrap();
        let tv = policy_tv_distance(&policy, &bc, &weights).unwrap();
        assert!(tv < 1e-3, "TV to the cloning policy is {tv}");
    }

    #[test]
    fn loss_trace_is_finite_and_eventually_nonincreasing() {
        let env = chain(4, 0.9);
        let ds = collect_tabular(&env, TabularBehavior::UniformRandom, 20, 30, 8).unwrap();
        let hp = HyperParams::new(1.0, 1.0, 0.9).unwrap();
        let cfg = SolveConfig {
            max_iters: 3000,
            lr: 3e-3,
            grad_tolerance: 0.0,
            schedule: LrSchedule::CosineToZero { total_steps: 3000 },
        };
        let sol = solve_critic_full_batch(&ds, &hp, &cfg).unwrap();
        let loss = &sol.trace.loss;
        assert_eq!(loss.len(), 3000);
        assert!(loss.iter().all(|l| l.is_finite()));
        // Decaying steps make the tail monotone up to vanishing wiggle.
        for w in loss[2400..].windows(2) {
            assert!(w[1] <= w[0] + 1e-7, "late-trace increase: {} -> {}", w[0], w[1]);
        }
        assert!(loss[2999] < loss[0]);
    }

    #[test]
    fn zero_weight_transitions_are_excluded_from_the_policy() {
        // Action 1 leads to a state whose critic value is so low that
        // w* underflows to exactly zero, so the extracted row must give that
        // action probability exactly zero.
        let transitions = vec![
            Transition {
                state: StateRepr::Index(0),
                action: 0,
                rewards: vec![1.0],
                next_state: StateRepr::Index(1),
                done: true,
                initial_state: StateRepr::Index(0),
                preference: None,
            },
            Transition {
                state: StateRepr::Index(0),
                action: 1,
                rewards: vec![0.0],
                next_state: StateRepr::Index(2),
                done: false,
                initial_state: StateRepr::Index(0),
                preference: None,
            },
        ];
        let ds = handmade_dataset(transitions, 3, 0.9);
        let hp = HyperParams::new(1.0, 1.0, 0.9).unwrap();
        let critic = TabularCritic {
            nu: vec![0.0, 0.0, -1000.0],
        };
        let pref = PreferenceVector::uniform(1);
        let policy = extract_policy(&ds, &critic, &pref, &hp).unwrap();
        assert_eq!(policy.prob(0, 1), 0.0);
        assert_eq!(policy.prob(0, 0), 1.0);
        // Unseen states get the uniform fallback.
        assert_eq!(policy.row(1), &[0.5, 0.5]);
    }

    #[test]
    fn weighted_mle_matches_simplex_grid_search() {
        // With gamma = 0, nu = 0, mu = 1 and beta = 1, the weight of a
        // transition with scalar reward r is w* = f'^{-1}(r) = r + 1.
        // Two transitions from one state with rewards 1.7 and 0.3 produce
        // weights 2.7 and 1.3, so the closed form gives (0.675, 0.325); a
        // grid search of the weighted log-likelihood over the simplex must
        // agree to grid resolution.
        let transitions = vec![
            Transition {
                state: StateRepr::Index(0),
                action: 0,
                rewards: vec![1.7],
                next_state: StateRepr::Index(1),
                done: true,
                initial_state: StateRepr::Index(0),
                preference: None,
            },
            Transition {
                state: StateRepr::Index(0),
                action: 1,
                rewards: vec![0.3],
                next_state: StateRepr::Index(2),
                done: true,
                initial_state: StateRepr::Index(0),
                preference: None,
            },
        ];
        let ds = handmade_dataset(transitions, 3, 0.0);
        let hp = HyperParams::new(1.0, 1.0, 0.0).unwrap();
        let critic = TabularCritic { nu: vec![0.0; 3] };
        let pref = PreferenceVector::uniform(1);
        let policy = extract_policy(&ds, &critic, &pref, &hp).unwrap();
        assert_relative_eq!(policy.prob(0, 0), 2.7 / 4.0, max_relative = 1e-12);

        let mut best_p = 0.0;
        let mut best_ll = f64::NEG_INFINITY;
        for i in 1..1000 {
            let p = i as f64 / 1000.0;
            let ll = 2.7 * p.ln() + 1.3 * (1.0 - p).ln();
            if ll > best_ll {
                best_ll = ll;
                best_p = p;
            }
        }
        assert!((policy.prob(0, 0) - best_p).abs() <= 5e-4 + 1e-12);
    }

    #[test]
    fn chain_return_is_geometric_in_the_goal_distance() {
        // Three silent states then the goal: the scoring step happens at
        // t = 2, so the exact return is gamma^2 exactly.
        let gamma = 0.9;
        let env = chain(4, gamma);
        let j = evaluate_exact(&env, &always_advance(4)).unwrap();
        assert_relative_eq!(j[0], gamma * gamma, max_relative = 1e-12);
    }

    #[test]
    fn exact_solve_matches_monte_carlo_within_three_standard_errors() {
        let env = build_four_rooms();
        let uniform = TabularPolicy::uniform(env.n_states(), env.n_actions());
        let exact = evaluate_exact(&env, &uniform).unwrap();
        // Uniform wandering still reaches every goal.
        assert!(exact.iter().all(|&ji| ji > 0.0), "exact returns {exact:?}");
        let mc = evaluate_monte_carlo(&env, &uniform, 5000, 1200, 17).unwrap();
        for k in 0..3 {
            let diff = (exact[k] - mc.returns[k]).abs();
            assert!(
                diff <= 3.0 * mc.std_errors[k],
                "objective {k}: exact {} vs MC {} +/- {}",
                exact[k],
                mc.returns[k],
                mc.std_errors[k]
            );
        }
    }

    #[test]
    fn flipped_regularizer_sign_collapses_mu() {
        let env = chain(4, 0.9);
        let ds = collect_tabular(&env, TabularBehavior::UniformRandom, 20, 30, 8).unwrap();
        let cfg = SolveConfig {
            max_iters: 2500,
            lr: 1e-2,
            grad_tolerance: 0.0,
            schedule: LrSchedule::Constant,
        };
        let flipped = HyperParams::new(1.0, 1.0, 0.9)
            .unwrap()
            .with_regularizer_sign(RegularizerSign::FlippedForTypoTest);
        let sol = solve_critic_full_batch(&ds, &flipped, &cfg).unwrap();
        let min_over_trace = sol.trace.min_mu.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(min_over_trace < 1e-3, "flipped sign kept mu at {min_over_trace}");

        let correct = HyperParams::new(1.0, 1.0, 0.9).unwrap();
        let sol = solve_critic_full_batch(&ds, &correct, &cfg).unwrap();
        let min_over_trace = sol.trace.min_mu.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(min_over_trace >= 1e-2, "correct sign let mu fall to {min_over_trace}");
    }

    #[test]
    fn gamma_mismatch_is_rejected() {
        let env = chain(4, 0.9);
        let ds = collect_tabular(&env, TabularBehavior::UniformRandom, 5, 30, 0).unwrap();
        let hp = HyperParams::new(1.0, 1.0, 0.95).unwrap();
        assert!(solve_critic_full_batch(&ds, &hp, &SolveConfig::default()).is_err());
    }

    #[test]
    fn artifact_round_trips_through_json() {
        let env = chain(4, 0.9);
        let ds = collect_tabular(&env, TabularBehavior::UniformRandom, 10, 30, 3).unwrap();
        let hp = HyperParams::new(1.0, 1.0, 0.9).unwrap();
        let cfg = SolveConfig {
            max_iters: 200,
            ..SolveConfig::default()
        };
        let sol = solve_critic_full_batch(&ds, &hp, &cfg).unwrap();
        let policy = extract_policy(&ds, &sol.critic, &sol.preference, &hp).unwrap();
        let artifact = TabularArtifact::from_solution("chain", 3, &hp, &sol, policy);
        let path = std::env::temp_dir().join(format!("fairdice-artifact-{}.json", std::process::id()));
        artifact.save_json(&path).unwrap();
        let loaded = TabularArtifact::load_json(&path).unwrap();
        std::fs::remove_file(&path).unwrap();
        assert_eq!(artifact, loaded);
    }
}
