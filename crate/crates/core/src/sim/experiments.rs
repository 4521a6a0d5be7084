//! Parameter sweeps and Monte Carlo experiments.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dp::{keyed_rng, tag};
use crate::equilibrium::{eta_budget_at_horizon, BudgetParams};
use crate::error::{Error, Result};
use crate::mediator::{truthfulness_experiment, TruthfulnessSummary};
use crate::sim::dynamics::{cell_estimates, dynamics_step, MoveRule};
use crate::sim::scenario::{gen_scenario, ScenarioSpec};

pub const USERS_HEADER: &str = "n,T,zeta,alpha,e1,e2,eta";
pub const CHANNELS_HEADER: &str = "k,T,n,zeta,alpha,e1,e2,eta,eta_per_channel";
pub const OPTIN_HEADER: &str = "ratio_in,ratio_out,runs,mean_opt_in,mean_opt_out,gap,t_stat,p_value";
pub const DYNAMICS_HEADER: &str = "step,cell,channels,users,moved";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsersRow {
    pub n: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub zeta: f64,
    pub alpha: f64,
    pub e1: f64,
    pub e2: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelsRow {
    pub k: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub n: usize,
    pub zeta: f64,
    pub alpha: f64,
    pub e1: f64,
    pub e2: f64,
    pub eta: f64,
    pub eta_per_channel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptinRow {
    pub ratio_in: f64,
    pub ratio_out: f64,
    pub runs: usize,
    pub mean_opt_in: Option<f64>,
    pub mean_opt_out: Option<f64>,
    pub gap: Option<f64>,
    pub t_stat: Option<f64>,
    pub p_value: Option<f64>,
}

impl From<&TruthfulnessSummary> for OptinRow {
    fn from(s: &TruthfulnessSummary) -> Self {
        OptinRow {
            ratio_in: s.ratio_in,
            ratio_out: 1.0 - s.ratio_in,
            runs: s.runs,
            mean_opt_in: s.mean_opt_in,
            mean_opt_out: s.mean_opt_out,
            gap: s.gap,
            t_stat: s.t_stat,
            p_value: s.p_value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsRow {
    pub step: usize,
    pub cell: usize,
    pub channels: usize,
    pub users: usize,
    pub moved: usize,
}

/// Budget parameters at `(n, k)`; γ and α default to 1/n unless the scenario pins them.
pub fn budget_params(base: &ScenarioSpec, n: usize, k: usize) -> BudgetParams {
    BudgetParams {
        n,
        m: base.m,
        k,
        gamma: base.gamma.unwrap_or(1.0 / n as f64),
        alpha: base.alpha.unwrap_or(1.0 / n as f64),
        beta: base.beta,
        epsilon: base.epsilon,
        delta: base.delta,
    }
}

pub fn default_user_sweep() -> Vec<usize> {
    (500..=2000).step_by(100).collect()
}

pub fn default_horizons() -> Vec<usize> {
    vec![10, 20, 30]
}

/// η over users and horizons.
pub fn experiment_users(base: &ScenarioSpec, n_list: &[usize], t_list: &[usize]) -> Result<Vec<UsersRow>> {
    let mut rows = Vec::with_capacity(n_list.len() * t_list.len());
    for &t in t_list {
        for &n in n_list {
            let b = eta_budget_at_horizon(&budget_params(base, n, base.k), t)?;
            rows.push(UsersRow {
                n,
                horizon: t,
                zeta: b.zeta,
                alpha: b.alpha,
                e1: b.e1,
                e2: b.e2,
                eta: b.eta,
            });
        }
    }
    Ok(rows)
}

/// η/k over channels and horizons at a fixed user count.
pub fn experiment_channels(base: &ScenarioSpec, k_list: &[usize], t_list: &[usize], n: usize) -> Result<Vec<ChannelsRow>> {
    let mut rows = Vec::with_capacity(k_list.len() * t_list.len());
    for &t in t_list {
        for &k in k_list {
            if k == 0 {
                return Err(Error::param("channel counts must be positive"));
            }
            let b = eta_budget_at_horizon(&budget_params(base, n, k), t)?;
            rows.push(ChannelsRow {
                k,
                horizon: t,
                n,
                zeta: b.zeta,
                alpha: b.alpha,
                e1: b.e1,
                e2: b.e2,
                eta: b.eta,
                eta_per_channel: b.eta / k as f64,
            });
        }
    }
    Ok(rows)
}

/// Opt-in versus opt-out utilities at each opt-in ratio.
pub fn experiment_optin(
    base: &ScenarioSpec,
    ratios: &[f64],
    runs: usize,
    noise_enabled: bool,
) -> Result<Vec<TruthfulnessSummary>> {
    if runs == 0 || ratios.is_empty() {
        return Err(Error::param("opt-in experiment needs at least one ratio and one run"));
    }
    ratios
        .iter()
        .map(|&r| truthfulness_experiment(base, r, runs, noise_enabled))
        .collect()
}

/// Greedy cell-selection dynamics. Cells get between ⌈k/2⌉ and k channels.
pub fn experiment_dynamics(base: &ScenarioSpec, steps: usize, rule: MoveRule) -> Result<Vec<DynamicsRow>> {
    let scenario = gen_scenario(base)?;
    let game = &scenario.game;
    let mut world = scenario.world;
    let mut rng = keyed_rng(base.seed, &[tag::DYNAMICS]);
    let lo = base.k.div_ceil(2);
    for c in world.channels.iter_mut() {
        *c = rng.random_range(lo..=base.k);
    }
    let p = game.contention_profile();
    let mean_p = p.as_slice().iter().sum::<f64>() / game.n as f64;
    let mut log_rate = 0.0;
    for i in 0..game.n {
        for d in 0..game.k {
            log_rate += game.rate(i, game.played[i], d)?.ln();
        }
    }
    log_rate /= (game.n * game.k) as f64;

    let mut rows = Vec::new();
    let mut moved = vec![0; world.n_cells()];
    for step in 0..=steps {
        let loads = world.loads();
        for c in 0..world.n_cells() {
            rows.push(DynamicsRow {
                step,
                cell: c,
                channels: world.channels[c],
                users: loads[c],
                moved: moved[c],
            });
        }
        if step == steps {
            break;
        }
        let est = cell_estimates(&world, mean_p, log_rate);
        let out = dynamics_step(&world, &est, rule, base.seed, step)?;
        world = out.world;
        moved = out.moved_out;
    }
    Ok(rows)
}
