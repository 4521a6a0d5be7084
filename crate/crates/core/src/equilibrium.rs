//! Aggregator grid, private target selection, best-response sets, the η
//! approximation budget, and brute-force regret oracles for tiny games.

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dp::{e1_total_bound, spar_cost, tag, NoiseControl, SparOutcome};
use crate::error::{Error, Result};
use crate::model::{
    expected_utility_with, mixed_with, Contributions, ContentionProfile, GameSpec, MixedStrategyProfile,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatorGrid {
    pub alpha: f64,
    pub values: Vec<f64>,
}

impl AggregatorGrid {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `⌊nγ/α⌋ + 1` evenly spaced values starting at 0. When `nγ/α` is integral
/// the last value is pinned to `nγ` exactly.
pub fn build_grid(n: usize, gamma: f64, alpha: f64) -> Result<AggregatorGrid> {
    if !(alpha > 0.0) || !(gamma > 0.0) || n == 0 {
        return Err(Error::param("grid needs n ≥ 1, γ > 0 and α > 0"));
    }
    let top = n as f64 * gamma;
    let ratio = top / alpha;
    if ratio < 1.0 - 1e-9 {
        return Err(Error::param(format!("α = {alpha} exceeds nγ = {top}")));
    }
    let steps = (ratio + 1e-9).floor() as usize;
    let mut values: Vec<f64> = (0..=steps).map(|s| s as f64 * alpha).collect();
    if (ratio - steps as f64).abs() <= 1e-9 {
        values[steps] = top;
    }
    Ok(AggregatorGrid { alpha, values })
}

/// Lipschitz-game approximation `γ√(8n ln(2mn))`.
pub fn zeta_bound(n: usize, m: usize, gamma: f64) -> f64 {
    let (n, m) = (n as f64, m as f64);
    gamma * (8.0 * n * (2.0 * m * n).ln()).sqrt()
}

/// `|Q_i^d(p, P_d) − q̂|` — the smallest cost satisfying both cross constraints.
pub fn candidate_cost(q_hat: f64, i: usize, p: &ContentionProfile, column: &[f64], gamma: f64) -> Result<f64> {
    let c = Contributions::new(p)?;
    Ok((mixed_with(&c, i, column, gamma)? - q_hat).abs())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetValuedTarget {
    pub n: usize,
    pub k: usize,
    /// Chosen grid index per (user, channel), row-major.
    pub grid_index: Vec<usize>,
    pub q_hat: Vec<f64>,
    /// Noisy cost released by SparCost, or the true cost on fallback.
    pub cost: Vec<f64>,
    pub fallback: Vec<bool>,
}

impl SetValuedTarget {
    pub fn q_hat(&self, i: usize, d: usize) -> f64 {
        self.q_hat[i * self.k + d]
    }

    pub fn fallback_count(&self) -> usize {
        self.fallback.iter().filter(|&&f| f).count()
    }
}

/// Noise-free cost table: `costs[(i*k + d)*N + g] = |Q_i^d − grid[g]|`.
fn cost_table(grid: &AggregatorGrid, c: &Contributions, profile: &MixedStrategyProfile, gamma: f64) -> Result<Vec<Vec<f64>>> {
    let (n, k) = (profile.n(), profile.k());
    let columns: Vec<Vec<f64>> = (0..k).map(|d| profile.column(d)).collect();
    (0..n * k)
        .into_par_iter()
        .map(|cell| {
            let (i, d) = (cell / k, cell % k);
            let a = mixed_with(c, i, &columns[d], gamma)?;
            Ok(grid.values.iter().map(|&r| (a - r).abs()).collect())
        })
        .collect()
}

/// Empirical quantile of every noise-free candidate cost; the default
/// SparCost threshold.
pub fn pilot_threshold(
    grid: &AggregatorGrid,
    p: &ContentionProfile,
    profile: &MixedStrategyProfile,
    gamma: f64,
    quantile: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&quantile) {
        return Err(Error::param("threshold quantile must lie in [0, 1]"));
    }
    let c = Contributions::new(p)?;
    let mut all: Vec<f64> = cost_table(grid, &c, &profile.with_opt_out_uniform(), gamma)?
        .into_iter()
        .flatten()
        .collect();
    all.sort_by(f64::total_cmp);
    let pos = ((all.len() - 1) as f64 * quantile).round() as usize;
    Ok(all[pos])
}

/// Runs SparCost over the grid for every (user, channel), streaming grid values
/// in ascending order. Exhausted streams fall back to the noise-free argmin.
pub fn select_targets(
    grid: &AggregatorGrid,
    p: &ContentionProfile,
    profile: &MixedStrategyProfile,
    gamma: f64,
    threshold: f64,
    epsilon: f64,
    noise: NoiseControl,
) -> Result<SetValuedTarget> {
    let c = Contributions::new(p)?;
    let (n, k) = (profile.n(), profile.k());
    let table = cost_table(grid, &c, &profile.with_opt_out_uniform(), gamma)?;
    let picks: Vec<(usize, f64, bool)> = table
        .par_iter()
        .enumerate()
        .map(|(cell, costs)| {
            let mut src = noise.source(&[tag::SPARCOST, (cell / k) as u64, (cell % k) as u64]);
            Ok(match spar_cost(costs, threshold, epsilon, gamma, &mut src)? {
                SparOutcome::Accepted { index, noisy_value } => (index, noisy_value, false),
                SparOutcome::Exhausted => {
                    let best = argmin(costs);
                    (best, costs[best], true)
                }
            })
        })
        .collect::<Result<_>>()?;
    let fallbacks = picks.iter().filter(|x| x.2).count();
    if fallbacks > 0 {
        info!("SparCost exhausted on {fallbacks} of {} cells; used the noise-free argmin", n * k);
    }
    Ok(SetValuedTarget {
        n,
        k,
        grid_index: picks.iter().map(|x| x.0).collect(),
        q_hat: picks.iter().map(|x| grid.values[x.0]).collect(),
        cost: picks.iter().map(|x| x.1).collect(),
        fallback: picks.iter().map(|x| x.2).collect(),
    })
}

fn argmin(xs: &[f64]) -> usize {
    let mut best = 0;
    for (j, &x) in xs.iter().enumerate() {
        if x < xs[best] {
            best = j;
        }
    }
    best
}

/// Actions whose utility is within ξ of the best (ties included). `None`
/// marks an action that cannot use the channel.
pub fn best_response_set(utilities: &[Option<f64>], xi: f64) -> Result<Vec<usize>> {
    if utilities.is_empty() {
        return Err(Error::param("empty action set"));
    }
    if !(xi >= 0.0) {
        return Err(Error::param("ξ must be non-negative"));
    }
    let best = utilities.iter().flatten().fold(f64::NEG_INFINITY, |a, &u| a.max(u));
    Ok(utilities
        .iter()
        .enumerate()
        .filter_map(|(j, u)| u.filter(|&u| u >= best - xi).map(|_| j))
        .collect())
}

/// Best-response set of user `i` on channel `d` with the aggregator held at `q_hat`.
pub fn channel_best_responses(game: &GameSpec, i: usize, d: usize, q_hat: f64, xi: f64) -> Result<Vec<usize>> {
    let utilities = (0..game.m)
        .map(|j| {
            let rate = game.rate(i, j, d)?;
            Ok((rate > 0.0).then(|| rate.ln() + q_hat))
        })
        .collect::<Result<Vec<_>>>()?;
    best_response_set(&utilities, xi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct E2Solution {
    pub e2: f64,
    /// Horizon `16n²γ² ln k / E2²` before rounding.
    pub horizon: f64,
}

fn learning_horizon(n: usize, k: usize, gamma: f64, e2: f64) -> f64 {
    16.0 * (n as f64 * gamma).powi(2) * (k as f64).ln() / (e2 * e2)
}

/// Learning error `4nγ√(ln k / T)` at a fixed horizon — the inverse of the
/// prescribed horizon relation.
pub fn e2_at_horizon(n: usize, k: usize, gamma: f64, horizon: f64) -> f64 {
    4.0 * n as f64 * gamma * ((k as f64).ln() / horizon).sqrt()
}

/// Solves `E² = 32√2 nγ² ln(2kT/β) √(ln k ln(1/δ)) / ε` with
/// `T = 16n²γ² ln k / E²`.
///
/// The left side increases and the right side decreases in `E`, so the root is
/// unique; it is bracketed and bisected. The log is clamped at zero so small
/// instances where `2kT/β < 1` stay well defined.
pub fn e2_fixed_point(n: usize, k: usize, gamma: f64, beta: f64, epsilon: f64, delta: f64) -> Result<E2Solution> {
    if n == 0 || k == 0 || !(gamma > 0.0) || !(beta > 0.0) || !(epsilon > 0.0) || !(delta > 0.0 && delta < 1.0) {
        return Err(Error::param("E2 needs n, k ≥ 1, γ, β, ε > 0 and δ in (0, 1)"));
    }
    if k == 1 {
        // nothing to learn with a single channel
        return Ok(E2Solution { e2: 0.0, horizon: 0.0 });
    }
    let lk = (k as f64).ln();
    let scale = 32.0 * 2f64.sqrt() * n as f64 * gamma * gamma * (lk * (1.0 / delta).ln()).sqrt() / epsilon;
    let rhs = |e: f64| {
        let t = learning_horizon(n, k, gamma, e);
        scale * (2.0 * k as f64 * t / beta).ln().max(0.0)
    };
    let h = |e: f64| e * e - rhs(e);

    let mut hi = 1.0;
    let mut iters = 0;
    while h(hi) < 0.0 {
        hi *= 2.0;
        iters += 1;
        if iters > 200 {
            return Err(Error::Numerical("could not bracket the E2 root".into()));
        }
    }
    let mut lo = hi;
    while h(lo) > 0.0 {
        lo *= 0.5;
        iters += 1;
        if iters > 2000 {
            return Err(Error::Numerical("could not bracket the E2 root".into()));
        }
    }
    for _ in 0..10_000 {
        let mid = 0.5 * (lo + hi);
        if h(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-13 * hi {
            let e2 = 0.5 * (lo + hi);
            return Ok(E2Solution {
                e2,
                horizon: learning_horizon(n, k, gamma, e2),
            });
        }
    }
    Err(Error::Numerical("E2 bisection did not converge".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetParams {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub delta: f64,
}

impl BudgetParams {
    /// Defaults of the reference scenario with γ = α = 1/n.
    pub fn reference(n: usize) -> Self {
        BudgetParams {
            n,
            m: 50,
            k: 15,
            gamma: 1.0 / n as f64,
            alpha: 1.0 / n as f64,
            beta: 0.25,
            epsilon: 0.1,
            delta: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproximationBudget {
    pub zeta: f64,
    pub alpha: f64,
    pub e1: f64,
    pub e2: f64,
    pub eta: f64,
    pub xi: f64,
    /// Learning horizon the E2 term corresponds to (unrounded).
    pub horizon: f64,
}

fn assemble(p: &BudgetParams, e2: f64, horizon: f64) -> ApproximationBudget {
    let zeta = zeta_bound(p.n, p.m, p.gamma);
    let e1 = e1_total_bound(p.n, p.k, p.gamma, p.alpha, p.beta, p.epsilon);
    ApproximationBudget {
        zeta,
        alpha: p.alpha,
        e1,
        e2,
        eta: zeta + p.alpha + e1 + e2,
        xi: p.gamma + 2.0 * p.alpha + zeta,
        horizon,
    }
}

fn check_params(p: &BudgetParams) -> Result<()> {
    if p.n == 0 || p.m == 0 || p.k == 0 {
        return Err(Error::param("n, m and k must be positive"));
    }
    if !(p.alpha > 0.0) || p.alpha > p.n as f64 * p.gamma * (1.0 + 1e-12) {
        return Err(Error::param("need 0 < α ≤ nγ"));
    }
    if !(p.beta > 0.0 && p.beta < 1.0) {
        return Err(Error::param("β must lie in (0, 1)"));
    }
    Ok(())
}

/// `η = ζ + α + E1 + E2` with E2 at its fixed point.
pub fn eta_budget(p: &BudgetParams) -> Result<ApproximationBudget> {
    check_params(p)?;
    let sol = e2_fixed_point(p.n, p.k, p.gamma, p.beta, p.epsilon, p.delta)?;
    Ok(assemble(p, sol.e2, sol.horizon))
}

/// `η` with the learning term evaluated at an explicit horizon `T`.
pub fn eta_budget_at_horizon(p: &BudgetParams, horizon: usize) -> Result<ApproximationBudget> {
    check_params(p)?;
    if horizon == 0 {
        return Err(Error::param("horizon must be at least 1"));
    }
    let t = horizon as f64;
    Ok(assemble(p, e2_at_horizon(p.n, p.k, p.gamma, t), t))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub per_user: Vec<f64>,
    pub max: f64,
}

/// Largest `n·m·k` accepted by the exhaustive oracles.
pub const REGRET_LIMIT: usize = 50_000;

/// Maximum gain each user can obtain by switching unilaterally to any action
/// and any pure channel, with everyone else held at `profile`.
pub fn measure_regret(game: &GameSpec, profile: &MixedStrategyProfile) -> Result<RegretReport> {
    let size = game.n * game.m * game.k;
    if size > REGRET_LIMIT {
        return Err(Error::Size { size, limit: REGRET_LIMIT });
    }
    let p = game.contention_profile();
    let base = Contributions::new(&p)?;
    let per_user = (0..game.n)
        .map(|i| {
            let current = expected_utility_with(game, &base, i, game.played[i], profile)?;
            let mut best = current;
            let mut dev = profile.clone();
            for j in 0..game.m {
                let c = Contributions::new(&p.with_user(i, game.actions[i][j].contention_prob))?;
                for d in 0..game.k {
                    let mut row = vec![0.0; game.k];
                    row[d] = 1.0;
                    dev.set_row(i, &row)?;
                    let u = expected_utility_with(game, &c, i, j, &dev)?;
                    best = best.max(u);
                }
            }
            Ok(best - current)
        })
        .collect::<Result<Vec<f64>>>()?;
    let max = per_user.iter().copied().fold(0.0, f64::max);
    Ok(RegretReport { per_user, max })
}

/// A pure profile: `(action, channel)` per user.
pub type PureProfile = Vec<(usize, usize)>;

/// Every pure profile of a game, in lexicographic order.
pub fn enumerate_pure_profiles(n: usize, m: usize, k: usize) -> Result<Vec<PureProfile>> {
    let per_user = m * k;
    let size = (per_user as f64).powi(n as i32);
    if size > REGRET_LIMIT as f64 {
        return Err(Error::Size { size: size as usize, limit: REGRET_LIMIT });
    }
    let mut out = vec![Vec::new()];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|prefix: PureProfile| {
                (0..per_user).map(move |s| {
                    let mut next = prefix.clone();
                    next.push((s / k, s % k));
                    next
                })
            })
            .collect();
    }
    Ok(out)
}

fn pure_contention(game: &GameSpec, s: &[(usize, usize)]) -> ContentionProfile {
    ContentionProfile::new(
        s.iter()
            .enumerate()
            .map(|(i, &(j, _))| game.actions[i][j].contention_prob)
            .collect(),
    )
}

/// Aggregators `Q_i^d(s)` on every channel for user `i` at a pure profile.
pub fn pure_aggregators(game: &GameSpec, i: usize, s: &[(usize, usize)]) -> Result<Vec<f64>> {
    let c = Contributions::new(&pure_contention(game, s))?;
    Ok((0..game.k)
        .map(|d| {
            game.gamma
                * s.iter()
                    .enumerate()
                    .filter(|(_, &(_, dl))| dl == d)
                    .map(|(l, _)| c.q(i, l))
                    .sum::<f64>()
        })
        .collect())
}

pub fn pure_utility(game: &GameSpec, i: usize, s: &[(usize, usize)]) -> Result<f64> {
    let (j, d) = s[i];
    let q = pure_aggregators(game, i, s)?[d];
    crate::model::channel_utility(game.rate(i, j, d)?, q)
}

/// Best unilateral gain of user `i` at a pure profile.
pub fn standard_regret(game: &GameSpec, i: usize, s: &[(usize, usize)]) -> Result<f64> {
    let current = pure_utility(game, i, s)?;
    let mut dev = s.to_vec();
    let mut best = current;
    for j in 0..game.m {
        for d in 0..game.k {
            dev[i] = (j, d);
            best = best.max(pure_utility(game, i, &dev)?);
        }
    }
    Ok(best - current)
}

/// Gain of user `i` against a fixed aggregator vector (one value per channel).
pub fn aggregative_regret_with(game: &GameSpec, i: usize, own: (usize, usize), aggregators: &[f64]) -> Result<f64> {
    let value = |j: usize, d: usize| -> Result<f64> { crate::model::channel_utility(game.rate(i, j, d)?, aggregators[d]) };
    let current = value(own.0, own.1)?;
    let mut best = current;
    for j in 0..game.m {
        for d in 0..game.k {
            best = best.max(value(j, d)?);
        }
    }
    Ok(best - current)
}

/// Gain of user `i` when the aggregators are frozen at their value under `s`.
pub fn aggregative_regret(game: &GameSpec, i: usize, s: &[(usize, usize)]) -> Result<f64> {
    let q = pure_aggregators(game, i, s)?;
    aggregative_regret_with(game, i, s[i], &q)
}

/// Small random instance for the brute-force checks.
#[cfg(test)]
pub(crate) fn random_tiny_game(seed: u64, n: usize, m: usize, k: usize, alpha: f64) -> GameSpec {
    use rand::Rng;
    use rand_distr::{Distribution, Exp1};
    let mut rng = crate::dp::keyed_rng(seed, &[tag::SCENARIO, n as u64, m as u64, k as u64]);
    let gains: Vec<f64> = (0..n * k).map(|_| Exp1.sample(&mut rng)).collect();
    let powers: Vec<f64> = (0..n * m * k).map(|_| 0.05 + 0.1 * rng.random::<f64>()).collect();
    let radio = crate::model::RadioParams {
        n,
        m,
        k,
        bandwidth_hz: vec![20e6; n * k],
        tx_power_w: powers,
        channel_gain: gains,
        noise_w: vec![1e-13; n * k],
    };
    GameSpec {
        n,
        m,
        k,
        gamma: 1.0 / n as f64,
        alpha,
        radio,
        actions: (0..n)
            .map(|_| {
                (0..m)
                    .map(|j| crate::model::ActionSpec::new(j, rng.random_range(1..10) as f64 / 10.0))
                    .collect()
            })
            .collect(),
        played: (0..n).map(|_| rng.random_range(0..m)).collect(),
    }
}
