//! Benchmark environments: a shared tabular multi-objective MDP container,
//! the four-rooms gridworld, seeded random MOMDPs, and the group-allocation
//! simulator.

mod four_rooms;
mod group_fair;
mod random_momdp;

pub use four_rooms::{build_four_rooms, build_four_rooms_with, four_rooms_layout, FourRoomsLayout};
pub use group_fair::{
    reference_action, GroupFairEnv, GroupFairState, GroupFairStep, ReferencePolicyKind,
    GROUP_FAIR_HORIZON, NUM_GROUPS, NUM_INDIVIDUALS, NUM_OPTIONS, OBS_DIM,
};
pub use random_momdp::{generate_random_momdp, RandomMomdpConfig};

use rand::{Rng, RngExt};

use crate::error::{FairdiceError, Result};

/// Tolerance used when validating probability rows.
pub const PROB_TOLERANCE: f64 = 1e-9;

/// A finite multi-objective MDP with sparse transition rows, expected reward
/// vectors per state-action pair, and absorbing goal states that pay a
/// one-hot reward on arrival.
#[derive(Debug, Clone)]
pub struct TabularMomdp {
    n_states: usize,
    n_actions: usize,
    n_objectives: usize,
    /// Sparse next-state distribution per `(s, a)`, indexed `s * A + a`.
    /// Rows of terminal states are empty.
    transitions: Vec<Vec<(usize, f64)>>,
    /// Expected reward vectors, row-major `[S x A x K]`.
    rewards: Vec<f64>,
    p0: Vec<f64>,
    gamma: f64,
    terminal: Vec<bool>,
    /// Objective index paid out on arrival at each terminal goal.
    goal_objective: Vec<Option<usize>>,
    env_id: String,
}

impl TabularMomdp {
    /// Builds and validates an MDP whose rewards come entirely from arriving
    /// at goal states: R_k(s, a) = Σ_{s'} T(s'|s, a) · 1{goal(s') = k}.
    pub fn from_goal_structure(
        env_id: impl Into<String>,
        n_states: usize,
        n_actions: usize,
        n_objectives: usize,
        transitions: Vec<Vec<(usize, f64)>>,
        p0: Vec<f64>,
        gamma: f64,
        goal_objective: Vec<Option<usize>>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 || n_objectives == 0 {
            return Err(FairdiceError::EnvConstruction(
                "states, actions and objectives must all be positive".to_string(),
            ));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(FairdiceError::EnvConstruction(format!(
                "gamma must lie in [0, 1), got {gamma}"
            )));
        }
        if transitions.len() != n_states * n_actions {
            return Err(FairdiceError::EnvConstruction(format!(
                "expected {} transition rows, got {}",
                n_states * n_actions,
                transitions.len()
            )));
        }
        if p0.len() != n_states || goal_objective.len() != n_states {
            return Err(FairdiceError::EnvConstruction(
                "p0 and goal_objective must have one entry per state".to_string(),
            ));
        }
        let p0_sum: f64 = p0.iter().sum();
        if p0.iter().any(|&p| p < 0.0) || (p0_sum - 1.0).abs() > PROB_TOLERANCE {
            return Err(FairdiceError::EnvConstruction(format!(
                "p0 must be a distribution; sums to {p0_sum}"
            )));
        }
        let terminal: Vec<bool> = goal_objective.iter().map(Option::is_some).collect();
        for (idx, row) in transitions.iter().enumerate() {
            let s = idx / n_actions;
            if terminal[s] {
                if !row.is_empty() {
                    return Err(FairdiceError::EnvConstruction(format!(
                        "terminal state {s} must have empty transition rows"
                    )));
                }
                continue;
            }
            let sum: f64 = row.iter().map(|&(_, p)| p).sum();
            if row.iter().any(|&(t, p)| t >= n_states || p < 0.0) || (sum - 1.0).abs() > PROB_TOLERANCE
            {
                return Err(FairdiceError::EnvConstruction(format!(
                    "transition row for state {s}, action {} is not a distribution (sum {sum})",
                    idx % n_actions
                )));
            }
        }
        for (s, g) in goal_objective.iter().enumerate() {
            if let Some(k) = g {
                if *k >= n_objectives {
                    return Err(FairdiceError::EnvConstruction(format!(
                        "goal state {s} pays objective {k} out of {n_objectives}"
                    )));
                }
            }
        }
        // Expected rewards follow from the goal structure.
        let mut rewards = vec![0.0; n_states * n_actions * n_objectives];
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = &transitions[s * n_actions + a];
                let base = (s * n_actions + a) * n_objectives;
                for &(next, p) in row {
                    if let Some(k) = goal_objective[next] {
                        rewards[base + k] += p;
                    }
                }
            }
        }
        Ok(TabularMomdp {
            n_states,
            n_actions,
            n_objectives,
            transitions,
            rewards,
            p0,
            gamma,
            terminal,
            goal_objective,
            env_id: env_id.into(),
        })
    }

    /// Identifier recorded in dataset metadata.
    pub fn env_id(&self) -> &str {
        &self.env_id
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_objectives(&self) -> usize {
        self.n_objectives
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Initial-state distribution.
    pub fn p0(&self) -> &[f64] {
        &self.p0
    }

    /// Whether `s` is absorbing.
    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    /// Objective paid on arrival at `s`, if `s` is a goal.
    pub fn goal_objective(&self, s: usize) -> Option<usize> {
        self.goal_objective[s]
    }

    /// Sparse next-state distribution for `(s, a)`.
    pub fn transition_row(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.transitions[s * self.n_actions + a]
    }

    /// Expected reward vector for `(s, a)`.
    pub fn expected_reward(&self, s: usize, a: usize) -> &[f64] {
        let base = (s * self.n_actions + a) * self.n_objectives;
        &self.rewards[base..base + self.n_objectives]
    }

    /// Realised reward on arrival at `s_next`: one-hot at its goal objective.
    pub fn arrival_reward(&self, s_next: usize) -> Vec<f64> {
        let mut r = vec![0.0; self.n_objectives];
        if let Some(k) = self.goal_objective[s_next] {
            r[k] = 1.0;
        }
        r
    }

    /// Draws an initial state from p0.
    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random_range(0.0..1.0);
        let mut acc = 0.0;
        for (s, &p) in self.p0.iter().enumerate() {
            acc += p;
            if u < acc {
                return s;
            }
        }
        self.n_states - 1
    }

    /// Draws a successor of `(s, a)`.
    pub fn sample_next<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> usize {
        let row = self.transition_row(s, a);
        debug_assert!(!row.is_empty(), "sampling from a terminal state");
        let u: f64 = rng.random_range(0.0..1.0);
        let mut acc = 0.0;
        for &(next, p) in row {
            acc += p;
            if u < acc {
                return next;
            }
        }
        row.last().expect("non-empty row").0
    }

    /// All states (useful when iterating goals).
    pub fn goal_states(&self) -> Vec<usize> {
        (0..self.n_states).filter(|&s| self.terminal[s]).collect()
    }
}
