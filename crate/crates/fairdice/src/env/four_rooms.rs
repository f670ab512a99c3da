//! Four-rooms gridworld with three one-hot-rewarding goals.
//!
//! An 11 × 11 grid is split into four rooms by a wall along row 5 and column
//! 5, with doorways at (2, 5), (8, 5), (5, 2) and (5, 8).  The agent starts
//! in the top-left corner (0, 0) and is rewarded with a standard basis vector
//! on reaching the goal in each of the other three rooms: (2, 8) pays
//! objective 0, (8, 2) objective 1 and (8, 8) objective 2.  Actions slip:
//! with the slip probability the executed move is drawn uniformly from the
//! four directions.  Moves into walls or off the grid leave the agent in
//! place, and goals absorb.

use super::TabularMomdp;
use crate::error::Result;

/// Grid side length.
const SIZE: usize = 11;
/// Movement deltas for up, down, left, right.
const DIRS: [(i64, i64); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
/// Goal cells and the objective each pays.
const GOALS: [((usize, usize), usize); 3] = [((2, 8), 0), ((8, 2), 1), ((8, 8), 2)];
/// Start cell.
const START: (usize, usize) = (0, 0);

/// Mapping between grid cells and state indices.
#[derive(Debug, Clone)]
pub struct FourRoomsLayout {
    /// Row-major cell → state index for free cells.
    cell_to_state: Vec<Option<usize>>,
    /// State index → (row, col).
    state_to_cell: Vec<(usize, usize)>,
}

impl FourRoomsLayout {
    fn build() -> Self {
        let mut cell_to_state = vec![None; SIZE * SIZE];
        let mut state_to_cell = Vec::new();
        for r in 0..SIZE {
            for c in 0..SIZE {
                if !is_wall(r, c) {
                    cell_to_state[r * SIZE + c] = Some(state_to_cell.len());
                    state_to_cell.push((r, c));
                }
            }
        }
        FourRoomsLayout {
            cell_to_state,
            state_to_cell,
        }
    }

    /// State index of a free cell, `None` for walls.
    pub fn state_of_cell(&self, row: usize, col: usize) -> Option<usize> {
        self.cell_to_state.get(row * SIZE + col).copied().flatten()
    }

    /// Grid cell of a state index.
    pub fn cell_of_state(&self, state: usize) -> (usize, usize) {
        self.state_to_cell[state]
    }

    /// Number of free cells.
    pub fn num_states(&self) -> usize {
        self.state_to_cell.len()
    }
}

/// Walls run along row 5 and column 5, broken by four doorways.
fn is_wall(r: usize, c: usize) -> bool {
    (c == 5 && r != 2 && r != 8) || (r == 5 && c != 2 && c != 8)
}

/// Deterministic single-step move; blocked moves stay in place.
fn mv(r: usize, c: usize, dir: usize) -> (usize, usize) {
    let (dr, dc) = DIRS[dir];
    let nr = r as i64 + dr;
    let nc = c as i64 + dc;
    if nr < 0 || nc < 0 || nr >= SIZE as i64 || nc >= SIZE as i64 {
        return (r, c);
    }
    let (nr, nc) = (nr as usize, nc as usize);
    if is_wall(nr, nc) {
        (r, c)
    } else {
        (nr, nc)
    }
}

/// The gridworld with the conventional slip of 0.1 and discount 0.99.
pub fn build_four_rooms() -> TabularMomdp {
    build_four_rooms_with(0.1, 0.99).expect("default parameters are valid")
}

/// The gridworld with explicit slip probability and discount.
///
/// With probability `1 − slip` the intended direction is executed; with
/// probability `slip` a direction is drawn uniformly from all four, so the
/// intended one keeps an extra slip/4 share.
pub fn build_four_rooms_with(slip: f64, gamma: f64) -> Result<TabularMomdp> {
    let layout = FourRoomsLayout::build();
    let n_states = layout.num_states();
    let n_actions = DIRS.len();

    let mut goal_objective = vec![None; n_states];
    for ((r, c), k) in GOALS {
        let s = layout.state_of_cell(r, c).expect("goals are free cells");
        goal_objective[s] = Some(k);
    }

    let mut transitions = vec![Vec::new(); n_states * n_actions];
    for s in 0..n_states {
        if goal_objective[s].is_some() {
            continue;
        }
        let (r, c) = layout.cell_of_state(s);
        for a in 0..n_actions {
            let mut probs = vec![0.0; n_states];
            for dir in 0..n_actions {
                let p = if dir == a { 1.0 - slip } else { 0.0 } + slip / n_actions as f64;
                let (nr, nc) = mv(r, c, dir);
                let next = layout.state_of_cell(nr, nc).expect("moves stay on free cells");
                probs[next] += p;
            }
            transitions[s * n_actions + a] = probs
                .into_iter()
                .enumerate()
                .filter(|&(_, p)| p > 0.0)
                .collect();
        }
    }

    let mut p0 = vec![0.0; n_states];
    p0[layout.state_of_cell(START.0, START.1).expect("start is free")] = 1.0;

    TabularMomdp::from_goal_structure(
        "four-rooms",
        n_states,
        n_actions,
        GOALS.len(),
        transitions,
        p0,
        gamma,
        goal_objective,
    )
}

/// Layout accessor for tests and rendering.
pub fn four_rooms_layout() -> FourRoomsLayout {
    FourRoomsLayout::build()
}
