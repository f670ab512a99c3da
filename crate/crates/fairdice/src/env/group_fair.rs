//! Resource-allocation simulator with group structure and compounding bias.
//!
//! One unit of reward per step is split across five groups by choosing one of
//! seven offered options (rows of a 7 × 5 matrix, each a distribution over
//! groups).  Each of 100 individuals holds three group memberships (possibly
//! repeated) and receives the summed allocation of its groups, so rewards are
//! 100-dimensional.  After each choice the option matrix is redrawn from a
//! Dirichlet whose concentration tilts toward groups that are ahead on
//! cumulative allocation: advantage feeds back into future options, so
//! persistent favouritism compounds.

use rand::{Rng, RngExt};
use rand_distr::{Distribution, Exp1, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{FairdiceError, Result};

/// Number of individuals (reward dimensions).
pub const NUM_INDIVIDUALS: usize = 100;
/// Number of groups.
pub const NUM_GROUPS: usize = 5;
/// Number of options offered per step.
pub const NUM_OPTIONS: usize = 7;
/// Episode length; every rollout terminates after this many steps.
pub const GROUP_FAIR_HORIZON: usize = 500;
/// Observation dimension: the flattened option matrix.
pub const OBS_DIM: usize = NUM_OPTIONS * NUM_GROUPS;

/// Memberships per individual.
const MEMBERSHIPS_EACH: usize = 3;
/// Group sizes (counting repeated membership) of the fixed configuration.
const FIXED_GROUP_SIZES: [usize; NUM_GROUPS] = [69, 46, 63, 74, 48];
/// Seed of the fixed membership shuffle.
const FIXED_MEMBERSHIP_SEED: u64 = 42;

/// The simulator: static group memberships plus step dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupFairEnv {
    membership: Vec<[usize; MEMBERSHIPS_EACH]>,
}

/// Mutable per-episode state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFairState {
    /// Currently offered options; each row is a distribution over groups.
    pub options: [[f64; NUM_GROUPS]; NUM_OPTIONS],
    /// Cumulative allocation received by each group.
    pub group_totals: [f64; NUM_GROUPS],
    /// Steps taken so far.
    pub t: usize,
}

/// Result of one environment step.
#[derive(Debug, Clone)]
pub struct GroupFairStep {
    pub next: GroupFairState,
    /// Per-individual rewards (length [`NUM_INDIVIDUALS`]).
    pub rewards: Vec<f64>,
    /// Whether the episode hit the horizon.
    pub done: bool,
}

/// Fixed behaviour policies used for data collection and as baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReferencePolicyKind {
    /// Uniform over the seven options.
    Random,
    /// Always the option most favourable to group 0.
    Biased,
    /// Always the option most favourable to the largest group (group 3).
    UtilOptim,
    /// The option with the highest per-step group welfare Σ_i ln O_{a,i}.
    Fair,
}

impl GroupFairEnv {
    /// The canonical membership configuration: group sizes [69, 46, 63, 74, 48].
    ///
    /// Built by shuffling a 300-slot multiset holding exactly those counts
    /// with a ChaCha stream seeded at 42 and dealing three slots per
    /// individual, which pins the sizes by construction while the assignment
    /// itself stays pseudo-random.
    pub fn fixed_membership() -> Self {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut slots = Vec::with_capacity(NUM_INDIVIDUALS * MEMBERSHIPS_EACH);
        for (group, &count) in FIXED_GROUP_SIZES.iter().enumerate() {
            slots.extend(std::iter::repeat_n(group, count));
        }
        debug_assert_eq!(slots.len(), NUM_INDIVIDUALS * MEMBERSHIPS_EACH);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(FIXED_MEMBERSHIP_SEED);
        slots.shuffle(&mut rng);
        let membership = slots
            .chunks_exact(MEMBERSHIPS_EACH)
            .map(|c| [c[0], c[1], c[2]])
            .collect();
        GroupFairEnv { membership }
    }

    /// Builds from explicit memberships (validated against the group count).
    pub fn from_membership(membership: Vec<[usize; MEMBERSHIPS_EACH]>) -> Result<Self> {
        if membership.len() != NUM_INDIVIDUALS {
            return Err(FairdiceError::EnvConstruction(format!(
                "expected {NUM_INDIVIDUALS} individuals, got {}",
                membership.len()
            )));
        }
        if membership.iter().flatten().any(|&g| g >= NUM_GROUPS) {
            return Err(FairdiceError::EnvConstruction(format!(
                "membership references a group >= {NUM_GROUPS}"
            )));
        }
        Ok(GroupFairEnv { membership })
    }

    /// Per-individual group memberships.
    pub fn membership(&self) -> &[[usize; MEMBERSHIPS_EACH]] {
        &self.membership
    }

    /// Group sizes counting repeated membership.
    pub fn group_sizes(&self) -> [usize; NUM_GROUPS] {
        let mut sizes = [0; NUM_GROUPS];
        for m in self.membership.iter().flatten() {
            sizes[*m] += 1;
        }
        sizes
    }

    /// Fresh episode: zero totals and options drawn from Dirichlet(1).
    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> GroupFairState {
        let mut options = [[0.0; NUM_GROUPS]; NUM_OPTIONS];
        for row in options.iter_mut() {
            // Symmetric Dirichlet(1) = normalised Exp(1) draws.
            for v in row.iter_mut() {
                *v = Exp1.sample(rng);
            }
            let total: f64 = row.iter().sum();
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        GroupFairState {
            options,
            group_totals: [0.0; NUM_GROUPS],
            t: 0,
        }
    }

    /// Applies `action`, pays each individual the sum of its groups' shares,
    /// and redraws the option matrix with advantage-tilted concentrations.
    pub fn step<R: Rng + ?Sized>(
        &self,
        state: &GroupFairState,
        action: usize,
        rng: &mut R,
    ) -> Result<GroupFairStep> {
        if action >= NUM_OPTIONS {
            return Err(FairdiceError::domain(format!(
                "action {action} out of range for {NUM_OPTIONS} options"
            )));
        }
        if state.t >= GROUP_FAIR_HORIZON {
            return Err(FairdiceError::domain(format!(
                "episode already ended at t = {}",
                state.t
            )));
        }
        let chosen = &state.options[action];
        let rewards: Vec<f64> = self
            .membership
            .iter()
            .map(|groups| groups.iter().map(|&g| chosen[g]).sum())
            .collect();

        let mut group_totals = state.group_totals;
        for (total, &share) in group_totals.iter_mut().zip(chosen) {
            *total += share;
        }

        let concentrations = advantage_concentrations(&group_totals);
        let mut options = [[0.0; NUM_GROUPS]; NUM_OPTIONS];
        for row in options.iter_mut() {
            sample_dirichlet_row(&concentrations, row, rng);
        }

        let t = state.t + 1;
        Ok(GroupFairStep {
            next: GroupFairState {
                options,
                group_totals,
                t,
            },
            rewards,
            done: t >= GROUP_FAIR_HORIZON,
        })
    }
}

impl GroupFairState {
    /// Flattened option matrix, the policy's observation.
    pub fn observation(&self) -> [f64; OBS_DIM] {
        let mut obs = [0.0; OBS_DIM];
        for (a, row) in self.options.iter().enumerate() {
            obs[a * NUM_GROUPS..(a + 1) * NUM_GROUPS].copy_from_slice(row);
        }
        obs
    }
}

/// Concentrations 1 + tanh((g_i − ḡ)/10) from cumulative group totals.
pub fn advantage_concentrations(group_totals: &[f64; NUM_GROUPS]) -> [f64; NUM_GROUPS] {
    let mean: f64 = group_totals.iter().sum::<f64>() / NUM_GROUPS as f64;
    let mut conc = [0.0; NUM_GROUPS];
    for (c, &g) in conc.iter_mut().zip(group_totals) {
        *c = 1.0 + ((g - mean) / 10.0).tanh();
    }
    conc
}

/// One Dirichlet(concentrations) draw via normalised Gamma samples.
///
/// tanh saturation can round a concentration down to exactly 0.0; the
/// Dirichlet limit puts no mass on that coordinate, so it is written as 0
/// without sampling.  At least one concentration is always ≥ 1 (some group
/// sits at or above the mean), so the normaliser stays positive.
fn sample_dirichlet_row<R: Rng + ?Sized>(
    concentrations: &[f64; NUM_GROUPS],
    row: &mut [f64; NUM_GROUPS],
    rng: &mut R,
) {
    let mut total = 0.0;
    for (v, &c) in row.iter_mut().zip(concentrations) {
        *v = if c > 0.0 {
            Gamma::new(c, 1.0).expect("positive shape").sample(rng)
        } else {
            0.0
        };
        total += *v;
    }
    if total > 0.0 {
        for v in row.iter_mut() {
            *v /= total;
        }
    } else {
        // Unreachable in exact arithmetic; keep the row a distribution.
        row.fill(1.0 / NUM_GROUPS as f64);
    }
}

/// Action of a fixed reference policy in the given state.
pub fn reference_action<R: Rng + ?Sized>(
    kind: ReferencePolicyKind,
    state: &GroupFairState,
    rng: &mut R,
) -> usize {
    match kind {
        ReferencePolicyKind::Random => rng.random_range(0..NUM_OPTIONS),
        ReferencePolicyKind::Biased => argmax_by(&state.options, |row| row[0]),
        ReferencePolicyKind::UtilOptim => argmax_by(&state.options, |row| row[3]),
        ReferencePolicyKind::Fair => {
            argmax_by(&state.options, |row| row.iter().map(|&v| v.ln()).sum())
        }
    }
}

/// First index attaining the maximum score (ties go to the lowest index).
fn argmax_by<F: Fn(&[f64; NUM_GROUPS]) -> f64>(
    options: &[[f64; NUM_GROUPS]; NUM_OPTIONS],
    score: F,
) -> usize {
    let mut best = 0;
    let mut best_score = score(&options[0]);
    for (a, row) in options.iter().enumerate().skip(1) {
        let s = score(row);
        if s > best_score {
            best = a;
            best_score = s;
        }
    }
    best
}
