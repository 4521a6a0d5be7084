//! Toy user-mobility dynamics over hexagonal cells.
//!
//! Users look at a per-cell utility estimate from the previous epoch and move
//! to the best cell among their own and its neighbours, staying put unless a
//! neighbour is strictly better.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dp::{keyed_rng, tag};
use crate::error::{Error, Result};
use crate::sim::scenario::HexWorld;

/// Expected log-throughput of a user in each cell: every one of the `K_c`
/// channels carries `L_c / K_c` contenders with mean contention `p`.
pub fn cell_estimates(world: &HexWorld, mean_contention: f64, log_rate: f64) -> Vec<f64> {
    let loads = world.loads();
    (0..world.n_cells())
        .map(|c| {
            let per_channel = loads[c] as f64 / world.channels[c].max(1) as f64;
            if world.channels[c] == 0 {
                f64::NEG_INFINITY
            } else {
                mean_contention.ln() + per_channel * (-mean_contention).ln_1p() + log_rate
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoveRule {
    /// Probability that a user with a strictly better neighbour acts on it.
    pub move_prob: f64,
}

impl Default for MoveRule {
    fn default() -> Self {
        MoveRule { move_prob: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub world: HexWorld,
    /// Users that left each cell.
    pub moved_out: Vec<usize>,
}

/// One synchronous greedy step.
pub fn dynamics_step(world: &HexWorld, estimates: &[f64], rule: MoveRule, seed: u64, step: usize) -> Result<StepOutcome> {
    if estimates.len() != world.n_cells() {
        return Err(Error::param("one estimate per cell required"));
    }
    let mut next = world.clone();
    let mut moved_out = vec![0; world.n_cells()];
    for (user, &c) in world.cell_of.iter().enumerate() {
        let mut best = c;
        for o in world.neighbours(c) {
            if estimates[o] > estimates[best] {
                best = o;
            }
        }
        if best == c {
            continue;
        }
        if rule.move_prob < 1.0 {
            let mut rng = keyed_rng(seed, &[tag::DYNAMICS, step as u64, user as u64]);
            if rng.random::<f64>() >= rule.move_prob {
                continue;
            }
        }
        next.cell_of[user] = best;
        next.positions[user] = world.centers[best];
        moved_out[c] += 1;
    }
    Ok(StepOutcome { world: next, moved_out })
}
