//! Seeded random multi-objective MDPs with absorbing one-hot goals.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use super::TabularMomdp;
use crate::error::{FairdiceError, Result};

/// Generation parameters for a random MOMDP.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomMomdpConfig {
    pub n_states: usize,
    pub n_actions: usize,
    /// Number of absorbing goal states; also the number of objectives.
    pub n_goals: usize,
    /// Successors per state-action pair.
    pub support: usize,
    pub gamma: f64,
    /// Kernel redraws allowed before reachability gives up.
    pub max_attempts: usize,
}

impl Default for RandomMomdpConfig {
    fn default() -> Self {
        RandomMomdpConfig {
            n_states: 50,
            n_actions: 4,
            n_goals: 3,
            support: 4,
            gamma: 0.95,
            max_attempts: 100,
        }
    }
}

impl RandomMomdpConfig {
    fn validate(&self) -> Result<()> {
        if self.n_goals == 0 || self.n_goals + 1 > self.n_states {
            return Err(FairdiceError::EnvConstruction(format!(
                "need at least one non-goal state besides the start: {} goals, {} states",
                self.n_goals, self.n_states
            )));
        }
        if self.support == 0 || self.support > self.n_states {
            return Err(FairdiceError::EnvConstruction(format!(
                "support {} must lie in 1..={}",
                self.support, self.n_states
            )));
        }
        if self.n_actions == 0 {
            return Err(FairdiceError::EnvConstruction("need >= 1 action".to_string()));
        }
        if self.max_attempts == 0 {
            return Err(FairdiceError::EnvConstruction("max_attempts must be >= 1".to_string()));
        }
        Ok(())
    }
}

/// Generates a random MOMDP whose goals are all reachable from the start.
///
/// State 0 is the unique initial state.  Goal states are drawn from the
/// remaining states; every non-goal `(s, a)` row gets `support` distinct
/// successors with symmetric-Dirichlet(1) probabilities.  Kernels that leave
/// any goal unreachable from the start are redrawn, up to
/// `cfg.max_attempts` times.
pub fn generate_random_momdp<R: Rng + ?Sized>(
    cfg: &RandomMomdpConfig,
    rng: &mut R,
) -> Result<TabularMomdp> {
    cfg.validate()?;
    for _ in 0..cfg.max_attempts {
        let env = draw_kernel(cfg, rng)?;
        if all_goals_reachable(&env) {
            return Ok(env);
        }
    }
    Err(FairdiceError::EnvConstruction(format!(
        "no kernel with all goals reachable after {} attempts",
        cfg.max_attempts
    )))
}

fn draw_kernel<R: Rng + ?Sized>(cfg: &RandomMomdpConfig, rng: &mut R) -> Result<TabularMomdp> {
    let mut goal_objective = vec![None; cfg.n_states];
    // Draw distinct goal states from 1..n_states, keeping state 0 as start.
    let candidates: Vec<usize> = (1..cfg.n_states).collect();
    for (k, idx) in rand::seq::index::sample(rng, candidates.len(), cfg.n_goals)
        .into_iter()
        .enumerate()
    {
        goal_objective[candidates[idx]] = Some(k);
    }

    let mut transitions = vec![Vec::new(); cfg.n_states * cfg.n_actions];
    for s in 0..cfg.n_states {
        if goal_objective[s].is_some() {
            continue;
        }
        for a in 0..cfg.n_actions {
            let successors = rand::seq::index::sample(rng, cfg.n_states, cfg.support);
            // Symmetric Dirichlet(1) weights via normalised Exp(1) draws.
            let raw: Vec<f64> = (0..cfg.support).map(|_| Exp1.sample(rng)).collect();
            let total: f64 = raw.iter().sum();
            transitions[s * cfg.n_actions + a] = successors
                .into_iter()
                .zip(raw)
                .map(|(next, w)| (next, w / total))
                .collect();
        }
    }

    let mut p0 = vec![0.0; cfg.n_states];
    p0[0] = 1.0;

    TabularMomdp::from_goal_structure(
        "random-momdp",
        cfg.n_states,
        cfg.n_actions,
        cfg.n_goals,
        transitions,
        p0,
        cfg.gamma,
        goal_objective,
    )
}

/// Breadth-first search over positive-probability edges from the start.
fn all_goals_reachable(env: &TabularMomdp) -> bool {
    let mut seen = vec![false; env.n_states()];
    let mut queue = std::collections::VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(s) = queue.pop_front() {
        if env.is_terminal(s) {
            continue;
        }
        for a in 0..env.n_actions() {
            for &(next, p) in env.transition_row(s, a) {
                if p > 0.0 && !seen[next] {
                    seen[next] = true;
                    queue.push_back(next);
                }
            }
        }
    }
    env.goal_states().iter().all(|&g| seen[g])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generation_is_seed_deterministic() {
        let cfg = RandomMomdpConfig::default();
        let a = generate_random_momdp(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = generate_random_momdp(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a.n_states(), b.n_states());
        for s in 0..a.n_states() {
            assert_eq!(a.goal_objective(s), b.goal_objective(s));
            for act in 0..a.n_actions() {
                let ra = a.transition_row(s, act);
                let rb = b.transition_row(s, act);
                assert_eq!(ra.len(), rb.len());
                for (&(ta, pa), &(tb, pb)) in ra.iter().zip(rb) {
                    assert_eq!(ta, tb);
                    assert_eq!(pa.to_bits(), pb.to_bits());
                }
            }
        }
    }

    #[test]
    fn different_seeds_differ() {
        let cfg = RandomMomdpConfig::default();
        let a = generate_random_momdp(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = generate_random_momdp(&cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let differs = (0..a.n_states()).any(|s| a.goal_objective(s) != b.goal_objective(s))
            || (0..a.n_states()).any(|s| {
                (0..a.n_actions()).any(|act| a.transition_row(s, act) != b.transition_row(s, act))
            });
        assert!(differs);
    }

    #[test]
    fn goals_absorb_and_pay_one_hot() {
        let cfg = RandomMomdpConfig::default();
        let env = generate_random_momdp(&cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let goals = env.goal_states();
        assert_eq!(goals.len(), cfg.n_goals);
        let mut objectives: Vec<usize> = goals
            .iter()
            .map(|&g| env.goal_objective(g).unwrap())
            .collect();
        objectives.sort_unstable();
        assert_eq!(objectives, vec![0, 1, 2]);
        for &g in &goals {
            assert!(env.transition_row(g, 0).is_empty());
            let r = env.arrival_reward(g);
            assert_eq!(r.iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn rows_have_requested_support() {
        let cfg = RandomMomdpConfig::default();
        let env = generate_random_momdp(&cfg, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        for s in 0..env.n_states() {
            if env.is_terminal(s) {
                continue;
            }
            for a in 0..env.n_actions() {
                let row = env.transition_row(s, a);
                assert_eq!(row.len(), cfg.support);
                let sum: f64 = row.iter().map(|&(_, p)| p).sum();
                assert!((sum - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn degenerate_configs_are_rejected() {
        let mut cfg = RandomMomdpConfig::default();
        cfg.support = 0;
        assert!(generate_random_momdp(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        let mut cfg = RandomMomdpConfig::default();
        cfg.n_goals = 50;
        assert!(generate_random_momdp(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
