//! Transition datasets: in-memory representation, JSONL persistence, and
//! seeded collection under the behaviour policies used throughout the
//! experiments.
//!
//! Every transition records the initial state of its trajectory so the critic
//! can pair each sampled transition with an initial-distribution sample, and
//! dataset metadata carries the normalisation statistics of its source so
//! training and evaluation apply identical transforms.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{
    reference_action, GroupFairEnv, ReferencePolicyKind, TabularMomdp, GROUP_FAIR_HORIZON,
    NUM_INDIVIDUALS, OBS_DIM,
};
use crate::error::{FairdiceError, Result};
use crate::metrics::NormStats;

/// A state as stored in a dataset: a tabular index or a feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StateRepr {
    Index(usize),
    Vector(Vec<f64>),
}

impl StateRepr {
    /// The tabular index, or a shape error for vector states.
    pub fn as_index(&self) -> Result<usize> {
        match self {
            StateRepr::Index(i) => Ok(*i),
            StateRepr::Vector(_) => Err(FairdiceError::shape(
                "expected a tabular state index, found a feature vector",
            )),
        }
    }

    /// The feature vector, or a shape error for index states.
    pub fn as_vector(&self) -> Result<&[f64]> {
        match self {
            StateRepr::Vector(v) => Ok(v),
            StateRepr::Index(_) => Err(FairdiceError::shape(
                "expected a feature vector, found a tabular state index",
            )),
        }
    }
}

/// One environment step plus its trajectory's initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    #[serde(rename = "s")]
    pub state: StateRepr,
    #[serde(rename = "a")]
    pub action: usize,
    #[serde(rename = "r")]
    pub rewards: Vec<f64>,
    #[serde(rename = "s_next")]
    pub next_state: StateRepr,
    pub done: bool,
    #[serde(rename = "s_init")]
    pub initial_state: StateRepr,
    /// Optional preference tag carried by preference-conditioned datasets.
    #[serde(rename = "pref", skip_serializing_if = "Option::is_none", default)]
    pub preference: Option<Vec<f64>>,
}

/// The state space a dataset was collected in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StateSpace {
    /// Indices below the given state count.
    Tabular(usize),
    /// Feature vectors of the given dimension.
    Vector(usize),
}

/// Sidecar metadata: provenance plus the normalisation statistics of the
/// collected data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub env_id: String,
    pub behavior: String,
    pub seed: u64,
    pub gamma: f64,
    pub state_space: StateSpace,
    pub n_actions: usize,
    pub num_objectives: usize,
    pub num_episodes: usize,
    pub num_transitions: usize,
    pub norm: NormStats,
}

/// An offline dataset: metadata plus transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDataset {
    meta: DatasetMeta,
    transitions: Vec<Transition>,
}

const META_FILE: &str = "meta.json";
const TRANSITIONS_FILE: &str = "transitions.jsonl";

impl TransitionDataset {
    /// Validates the transitions against the declared spaces, computes
    /// normalisation statistics, and assembles the dataset.
    #[allow(clippy::too_many_arguments)]
    pub fn from_transitions(
        env_id: impl Into<String>,
        behavior: impl Into<String>,
        seed: u64,
        gamma: f64,
        state_space: StateSpace,
        n_actions: usize,
        num_objectives: usize,
        num_episodes: usize,
        transitions: Vec<Transition>,
    ) -> Result<Self> {
        if transitions.is_empty() {
            return Err(FairdiceError::data("refusing to build an empty dataset"));
        }
        for (i, t) in transitions.iter().enumerate() {
            if t.action >= n_actions {
                return Err(FairdiceError::data(format!(
                    "transition {i}: action {} out of range {n_actions}",
                    t.action
                )));
            }
            if t.rewards.len() != num_objectives {
                return Err(FairdiceError::data(format!(
                    "transition {i}: {} reward components, expected {num_objectives}",
                    t.rewards.len()
                )));
            }
            if t.rewards.iter().any(|r| !r.is_finite()) {
                return Err(FairdiceError::data(format!("transition {i}: non-finite reward")));
            }
            for (what, state) in [("s", &t.state), ("s_next", &t.next_state), ("s_init", &t.initial_state)]
            {
                check_state(state, state_space)
                    .map_err(|e| FairdiceError::data(format!("transition {i} {what}: {e}")))?;
            }
        }

        let flat_rewards: Vec<f64> = transitions.iter().flat_map(|t| t.rewards.iter().copied()).collect();
        let mut norm = NormStats::rewards_from_rows(&flat_rewards, num_objectives)?;
        if let StateSpace::Vector(d) = state_space {
            let flat_states: Vec<f64> = transitions
                .iter()
                .flat_map(|t| t.state.as_vector().expect("validated above").iter().copied())
                .collect();
            norm = norm.with_states_from_rows(&flat_states, d)?;
        }

        let meta = DatasetMeta {
            env_id: env_id.into(),
            behavior: behavior.into(),
            seed,
            gamma,
            state_space,
            n_actions,
            num_objectives,
            num_episodes,
            num_transitions: transitions.len(),
            norm,
        };
        Ok(TransitionDataset { meta, transitions })
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Writes `meta.json` and `transitions.jsonl` under `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let meta_json = serde_json::to_string_pretty(&self.meta)?;
        fs::write(dir.join(META_FILE), meta_json)?;
        let mut out = BufWriter::new(fs::File::create(dir.join(TRANSITIONS_FILE))?);
        for t in &self.transitions {
            serde_json::to_writer(&mut out, t)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    /// Loads a dataset saved by [`save_dir`](Self::save_dir) and re-checks
    /// the transition count recorded in the metadata.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(dir.join(META_FILE))?)?;
        let reader = BufReader::new(fs::File::open(dir.join(TRANSITIONS_FILE))?);
        let mut transitions = Vec::with_capacity(meta.num_transitions);
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            transitions.push(serde_json::from_str(&line)?);
        }
        if transitions.len() != meta.num_transitions {
            return Err(FairdiceError::data(format!(
                "metadata promises {} transitions, file holds {}",
                meta.num_transitions,
                transitions.len()
            )));
        }
        Ok(TransitionDataset { meta, transitions })
    }
}

fn check_state(state: &StateRepr, space: StateSpace) -> Result<()> {
    match (state, space) {
        (StateRepr::Index(i), StateSpace::Tabular(n)) => {
            if *i >= n {
                Err(FairdiceError::data(format!("state index {i} out of range {n}")))
            } else {
                Ok(())
            }
        }
        (StateRepr::Vector(v), StateSpace::Vector(d)) => {
            if v.len() != d {
                Err(FairdiceError::data(format!(
                    "state vector has {} dims, expected {d}",
                    v.len()
                )))
            } else if v.iter().any(|x| !x.is_finite()) {
                Err(FairdiceError::data("non-finite state component"))
            } else {
                Ok(())
            }
        }
        _ => Err(FairdiceError::data("state kind does not match the declared state space")),
    }
}

// ---------------------------------------------------------------------------
// Behaviour policies for tabular environments
// ---------------------------------------------------------------------------

/// Data-collection policies for tabular environments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TabularBehavior {
    /// Uniform over actions.
    UniformRandom,
    /// The scalarised-optimal action with probability `level`, uniform
    /// otherwise.
    OptimalityMix { level: f64 },
}

impl TabularBehavior {
    fn label(&self) -> String {
        match self {
            TabularBehavior::UniformRandom => "uniform".to_string(),
            TabularBehavior::OptimalityMix { level } => format!("optimality-{level}"),
        }
    }
}

/// Per-state optimal actions for the scalarised reward Σ_k R_k(s, a), by
/// value iteration to a 1e−12 sup-norm fixed point (ties → lowest index).
pub fn optimal_actions(env: &TabularMomdp) -> Vec<usize> {
    let n = env.n_states();
    let mut v = vec![0.0; n];
    let scalar_reward = |s: usize, a: usize| -> f64 { env.expected_reward(s, a).iter().sum() };
    for _ in 0..100_000 {
        let mut max_change: f64 = 0.0;
        for s in 0..n {
            if env.is_terminal(s) {
                continue;
            }
            let mut best = f64::NEG_INFINITY;
            for a in 0..env.n_actions() {
                let mut q = scalar_reward(s, a);
                for &(s_next, p) in env.transition_row(s, a) {
                    q += env.gamma() * p * v[s_next];
                }
                best = best.max(q);
            }
            max_change = max_change.max((best - v[s]).abs());
            v[s] = best;
        }
        if max_change < 1e-12 {
            break;
        }
    }
    (0..n)
        .map(|s| {
            let qs: Vec<f64> = (0..env.n_actions())
                .map(|a| {
                    let mut q = scalar_reward(s, a);
                    for &(s_next, p) in env.transition_row(s, a) {
                        q += env.gamma() * p * v[s_next];
                    }
                    q
                })
                .collect();
            argmax_with_tolerance(&qs)
        })
        .collect()
}

/// Lowest index within 1e−9 of the maximum, so exactly-tied values (e.g. from
/// symmetric dynamics) resolve identically regardless of rounding order.
fn argmax_with_tolerance(values: &[f64]) -> usize {
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .position(|&q| q >= best - 1e-9)
        .expect("nonempty value list")
}

fn rollout_tabular<R: Rng + ?Sized>(
    env: &TabularMomdp,
    choose: &mut dyn FnMut(usize, &mut R) -> usize,
    horizon: usize,
    rng: &mut R,
    out: &mut Vec<Transition>,
) {
    let s0 = env.sample_initial(rng);
    let mut s = s0;
    for _ in 0..horizon {
        if env.is_terminal(s) {
            break;
        }
        let a = choose(s, rng);
        let s_next = env.sample_next(s, a, rng);
        out.push(Transition {
            state: StateRepr::Index(s),
            action: a,
            rewards: env.arrival_reward(s_next),
            next_state: StateRepr::Index(s_next),
            done: env.is_terminal(s_next),
            initial_state: StateRepr::Index(s0),
            preference: None,
        });
        s = s_next;
    }
}

/// Collects `n_trajectories` episodes (each cut at `horizon` steps) under the
/// given behaviour policy.  The same seed always yields the same dataset.
pub fn collect_tabular(
    env: &TabularMomdp,
    behavior: TabularBehavior,
    n_trajectories: usize,
    horizon: usize,
    seed: u64,
) -> Result<TransitionDataset> {
    if n_trajectories == 0 || horizon == 0 {
        return Err(FairdiceError::config("need at least one trajectory and horizon >= 1"));
    }
    if let TabularBehavior::OptimalityMix { level } = behavior {
        if !(0.0..=1.0).contains(&level) {
            return Err(FairdiceError::config(format!(
                "optimality level must lie in [0, 1], got {level}"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let greedy = match behavior {
        TabularBehavior::OptimalityMix { .. } => optimal_actions(env),
        TabularBehavior::UniformRandom => Vec::new(),
    };
    let n_actions = env.n_actions();
    let mut choose = |s: usize, rng: &mut ChaCha8Rng| -> usize {
        match behavior {
            TabularBehavior::UniformRandom => rng.random_range(0..n_actions),
            TabularBehavior::OptimalityMix { level } => {
                if rng.random_bool(level) {
                    greedy[s]
                } else {
                    rng.random_range(0..n_actions)
                }
            }
        }
    };
    let mut transitions = Vec::new();
    for _ in 0..n_trajectories {
        rollout_tabular(env, &mut choose, horizon, &mut rng, &mut transitions);
    }
    TransitionDataset::from_transitions(
        env.env_id(),
        behavior.label(),
        seed,
        env.gamma(),
        StateSpace::Tabular(env.n_states()),
        env.n_actions(),
        env.n_objectives(),
        n_trajectories,
        transitions,
    )
}

/// Collects a goal-skewed dataset by rejection sampling uniform-random
/// episodes on their terminal goal until per-goal trajectory quotas are met.
///
/// `fractions[k]` is the share of trajectories that must end at the goal
/// rewarding objective `k` (largest-remainder rounding).  Episodes that reach
/// an already-full goal, or no goal within `horizon` steps, are discarded.
pub fn collect_goal_stratified(
    env: &TabularMomdp,
    fractions: &[f64],
    n_trajectories: usize,
    horizon: usize,
    seed: u64,
) -> Result<TransitionDataset> {
    if fractions.len() != env.n_objectives() {
        return Err(FairdiceError::config(format!(
            "{} goal fractions for {} objectives",
            fractions.len(),
            env.n_objectives()
        )));
    }
    if fractions.iter().any(|&f| !(0.0..=1.0).contains(&f))
        || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(FairdiceError::config("goal fractions must be in [0, 1] and sum to 1"));
    }
    if n_trajectories == 0 || horizon == 0 {
        return Err(FairdiceError::config("need at least one trajectory and horizon >= 1"));
    }
    let quotas = largest_remainder(n_trajectories, fractions);
    let mut remaining = quotas.clone();
    let n_actions = env.n_actions();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut choose =
        |_s: usize, rng: &mut ChaCha8Rng| -> usize { rng.random_range(0..n_actions) };
    let mut transitions = Vec::new();
    let max_attempts = 200 * n_trajectories;
    let mut accepted = 0;
    for _ in 0..max_attempts {
        if accepted == n_trajectories {
            break;
        }
        let mut episode = Vec::new();
        rollout_tabular(env, &mut choose, horizon, &mut rng, &mut episode);
        let reached = episode
            .last()
            .filter(|t| t.done)
            .and_then(|t| env.goal_objective(t.next_state.as_index().expect("tabular rollout")));
        if let Some(goal) = reached {
            if remaining[goal] > 0 {
                remaining[goal] -= 1;
                accepted += 1;
                transitions.extend(episode);
            }
        }
    }
    if accepted != n_trajectories {
        return Err(FairdiceError::data(format!(
            "goal quotas unreachable: accepted {accepted}/{n_trajectories} \
             episodes after {max_attempts} attempts (remaining per goal: {remaining:?})"
        )));
    }
    let pct: Vec<String> = fractions.iter().map(|f| format!("{}", (f * 100.0).round())).collect();
    TransitionDataset::from_transitions(
        env.env_id(),
        format!("goal-stratified-{}", pct.join("/")),
        seed,
        env.gamma(),
        StateSpace::Tabular(env.n_states()),
        env.n_actions(),
        env.n_objectives(),
        n_trajectories,
        transitions,
    )
}

/// Integer quotas that sum to `n` and track `fractions` (largest remainder).
fn largest_remainder(n: usize, fractions: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&i, &j| {
        let ri = exact[i] - exact[i].floor();
        let rj = exact[j] - exact[j].floor();
        rj.partial_cmp(&ri).unwrap().then(i.cmp(&j))
    });
    for &i in order.iter().take(n - assigned) {
        counts[i] += 1;
    }
    counts
}

/// Rolls out a reference policy on the allocation simulator for
/// `n_rollouts` episodes of `horizon` steps (at most the environment's
/// 500-step episode length).
pub fn collect_group_fair(
    env: &GroupFairEnv,
    kind: ReferencePolicyKind,
    n_rollouts: usize,
    horizon: usize,
    seed: u64,
) -> Result<TransitionDataset> {
    if n_rollouts == 0 || horizon == 0 {
        return Err(FairdiceError::config("need at least one rollout and horizon >= 1"));
    }
    if horizon > GROUP_FAIR_HORIZON {
        return Err(FairdiceError::config(format!(
            "horizon {horizon} exceeds the {GROUP_FAIR_HORIZON}-step episode length"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transitions = Vec::with_capacity(n_rollouts * horizon);
    for _ in 0..n_rollouts {
        let mut state = env.reset(&mut rng);
        let initial = state.observation().to_vec();
        for _ in 0..horizon {
            let a = reference_action(kind, &state, &mut rng);
            let step = env.step(&state, a, &mut rng)?;
            transitions.push(Transition {
                state: StateRepr::Vector(state.observation().to_vec()),
                action: a,
                rewards: step.rewards.clone(),
                next_state: StateRepr::Vector(step.next.observation().to_vec()),
                done: step.done,
                initial_state: StateRepr::Vector(initial.clone()),
                preference: None,
            });
            state = step.next;
            if transitions.last().expect("just pushed").done {
                break;
            }
        }
    }
    let behavior = match kind {
        ReferencePolicyKind::Random => "random",
        ReferencePolicyKind::Biased => "biased",
        ReferencePolicyKind::UtilOptim => "util-optim",
        ReferencePolicyKind::Fair => "fair",
    };
    TransitionDataset::from_transitions(
        "group-fair",
        behavior,
        seed,
        0.99,
        StateSpace::Vector(OBS_DIM),
        crate::env::NUM_OPTIONS,
        NUM_INDIVIDUALS,
        n_rollouts,
        transitions,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::build_four_rooms;

    /// Two-state corridor: action 1 advances toward the single goal, action 0
    /// retreats to the start.  Scalarised-optimal play is "always advance".
    fn corridor(gamma: f64) -> TabularMomdp {
        // Rows are indexed s * A + a.
        let transitions = vec![
            vec![(0, 1.0)], // s0, stay
            vec![(1, 1.0)], // s0, advance
            vec![(0, 1.0)], // s1, retreat
            vec![(2, 1.0)], // s1, advance
            vec![],         // s2 (terminal goal)
            vec![],
        ];
        TabularMomdp::from_goal_structure(
            "corridor",
            3,
            2,
            1,
            transitions,
            vec![1.0, 0.0, 0.0],
            gamma,
            vec![None, None, Some(0)],
        )
        .unwrap()
    }

    /// Straight-line value iteration, kept independent of `optimal_actions`.
    fn vi_reference(env: &TabularMomdp) -> Vec<usize> {
        let mut v = vec![0.0; env.n_states()];
        for _ in 0..10_000 {
            let prev = v.clone();
            for s in 0..env.n_states() {
                if env.is_terminal(s) {
                    continue;
                }
                v[s] = (0..env.n_actions())
                    .map(|a| {
                        let r: f64 = env.expected_reward(s, a).iter().sum();
                        r + env.gamma()
                            * env
                                .transition_row(s, a)
                                .iter()
                                .map(|&(sn, p)| p * prev[sn])
                                .sum::<f64>()
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
            }
        }
        (0..env.n_states())
            .map(|s| {
                let qs: Vec<f64> = (0..env.n_actions())
                    .map(|a| {
                        let r: f64 = env.expected_reward(s, a).iter().sum();
                        r + env.gamma()
                            * env
                                .transition_row(s, a)
                                .iter()
                                .map(|&(sn, p)| p * v[sn])
                                .sum::<f64>()
                    })
                    .collect();
                let best = qs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                qs.iter().position(|&q| q >= best - 1e-9).unwrap()
            })
            .collect()
    }

    #[test]
    fn optimal_actions_match_value_iteration_oracle() {
        let env = corridor(0.9);
        assert_eq!(optimal_actions(&env)[..2], vi_reference(&env)[..2]);
        assert_eq!(optimal_actions(&env)[..2], [1, 1]);

        let rooms = build_four_rooms();
        assert_eq!(optimal_actions(&rooms), vi_reference(&rooms));
    }

    #[test]
    fn full_optimality_reproduces_greedy_trajectories() {
        let env = corridor(0.9);
        let ds = collect_tabular(&env, TabularBehavior::OptimalityMix { level: 1.0 }, 10, 50, 3)
            .unwrap();
        // Every episode is exactly 0 → 1 → 2 under the greedy policy.
        assert_eq!(ds.len(), 20);
        for t in ds.transitions() {
            assert_eq!(t.action, 1);
            assert_eq!(t.initial_state, StateRepr::Index(0));
        }
        let finals: Vec<bool> = ds.transitions().iter().map(|t| t.done).collect();
        assert_eq!(finals.iter().filter(|&&d| d).count(), 10);
    }

    #[test]
    fn collection_is_seed_deterministic() {
        let env = build_four_rooms();
        let a = collect_tabular(&env, TabularBehavior::UniformRandom, 5, 100, 11).unwrap();
        let b = collect_tabular(&env, TabularBehavior::UniformRandom, 5, 100, 11).unwrap();
        let c = collect_tabular(&env, TabularBehavior::UniformRandom, 5, 100, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn stratified_collection_hits_exact_goal_quotas() {
        let env = build_four_rooms();
        let ds = collect_goal_stratified(&env, &[0.8, 0.1, 0.1], 20, 400, 7).unwrap();
        assert_eq!(ds.meta().num_episodes, 20);
        let mut counts = [0usize; 3];
        for t in ds.transitions().iter().filter(|t| t.done) {
            let goal = env
                .goal_objective(t.next_state.as_index().unwrap())
                .expect("done transitions end at goals");
            counts[goal] += 1;
        }
        assert_eq!(counts, [16, 2, 2]);
    }

    #[test]
    fn stratified_collection_validates_fractions() {
        let env = build_four_rooms();
        assert!(collect_goal_stratified(&env, &[0.5, 0.5], 10, 400, 0).is_err());
        assert!(collect_goal_stratified(&env, &[0.8, 0.1, 0.2], 10, 400, 0).is_err());
    }

    #[test]
    fn largest_remainder_quotas_sum_and_round() {
        assert_eq!(largest_remainder(100, &[0.8, 0.1, 0.1]), vec![80, 10, 10]);
        assert_eq!(largest_remainder(10, &[0.55, 0.25, 0.2]), vec![6, 2, 2]);
        assert_eq!(largest_remainder(1, &[0.4, 0.3, 0.3]), vec![1, 0, 0]);
    }

    #[test]
    fn group_fair_collection_has_documented_shapes() {
        let env = GroupFairEnv::fixed_membership();
        let ds = collect_group_fair(&env, ReferencePolicyKind::Random, 3, 5, 2).unwrap();
        assert_eq!(ds.len(), 15);
        assert_eq!(ds.meta().state_space, StateSpace::Vector(OBS_DIM));
        assert_eq!(ds.meta().num_objectives, NUM_INDIVIDUALS);
        for t in ds.transitions() {
            assert_eq!(t.state.as_vector().unwrap().len(), OBS_DIM);
            assert_eq!(t.rewards.len(), NUM_INDIVIDUALS);
            assert!(!t.done, "horizon cut below the episode length leaves no done flags");
        }
        // Each rollout's transitions carry that rollout's first observation.
        let first = ds.transitions()[0].state.clone();
        assert_eq!(ds.transitions()[4].initial_state, first);
        assert_ne!(ds.transitions()[5].initial_state, first);
    }

    #[test]
    fn group_fair_horizon_cap_is_enforced() {
        let env = GroupFairEnv::fixed_membership();
        assert!(collect_group_fair(&env, ReferencePolicyKind::Random, 1, 501, 0).is_err());
    }

    #[test]
    fn metadata_records_reward_extrema() {
        let env = build_four_rooms();
        let ds = collect_tabular(&env, TabularBehavior::UniformRandom, 20, 400, 5).unwrap();
        let meta = ds.meta();
        for k in 0..3 {
            let lo = ds.transitions().iter().map(|t| t.rewards[k]).fold(f64::INFINITY, f64::min);
            let hi = ds
                .transitions()
                .iter()
                .map(|t| t.rewards[k])
                .fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(meta.norm.reward_min[k], lo);
            assert_eq!(meta.norm.reward_max[k], hi);
        }
    }

    #[test]
    fn save_and_load_round_trip() {
        let env = build_four_rooms();
        let ds = collect_tabular(&env, TabularBehavior::UniformRandom, 4, 60, 9).unwrap();
        let dir = std::env::temp_dir().join(format!("fairdice-ds-{}", std::process::id()));
        ds.save_dir(&dir).unwrap();
        let loaded = TransitionDataset::load_dir(&dir).unwrap();
        std::fs::remove_dir_all(&dir).unwrap();
        assert_eq!(ds, loaded);
    }

    #[test]
    fn state_repr_serializes_untagged() {
        let idx = serde_json::to_string(&StateRepr::Index(7)).unwrap();
        assert_eq!(idx, "7");
        let vec = serde_json::to_string(&StateRepr::Vector(vec![0.5, 1.0])).unwrap();
        assert_eq!(vec, "[0.5,1.0]");
        assert_eq!(serde_json::from_str::<StateRepr>("7").unwrap(), StateRepr::Index(7));
        assert_eq!(
            serde_json::from_str::<StateRepr>("[0.5,1.0]").unwrap(),
            StateRepr::Vector(vec![0.5, 1.0])
        );
    }

    #[test]
    fn construction_rejects_malformed_transitions() {
        let env = corridor(0.9);
        let ds = collect_tabular(&env, TabularBehavior::UniformRandom, 2, 20, 1).unwrap();
        let mut bad = ds.transitions()[0].clone();
        bad.rewards = vec![1.0, 2.0];
        let mut transitions = ds.transitions().to_vec();
        transitions.push(bad);
        assert!(TransitionDataset::from_transitions(
            "corridor",
            "uniform",
            1,
            0.9,
            StateSpace::Tabular(3),
            2,
            1,
            2,
            transitions.clone(),
        )
        .is_err());
        transitions.pop();
        let mut out_of_range = transitions[0].clone();
        out_of_range.action = 2;
        transitions.push(out_of_range);
        assert!(TransitionDataset::from_transitions(
            "corridor",
            "uniform",
            1,
            0.9,
            StateSpace::Tabular(3),
            2,
            1,
            2,
            transitions,
        )
        .is_err());
    }
}
