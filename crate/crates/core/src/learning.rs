//! Multiplicative-weights learning of channel-access strategies.
//!
//! Each period the mediator privately selects one aggregator per (user,
//! channel) with the exponential mechanism and publishes the selections. Every
//! user then turns its own selections into a per-channel connection
//! probability `q̄`, takes a multiplicative step and projects back onto its
//! constraint set. A user's trajectory therefore depends only on its own
//! constraint set, the published selections and the public contention profile,
//! which [`replay_user`] reproduces from scratch.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dp::{exp_select, per_round_epsilon, tag, NoiseControl};
use crate::equilibrium::AggregatorGrid;
use crate::error::{Error, Result};
use crate::model::{Contributions, MixedStrategyProfile, ROW_TOL};

/// Direction of the multiplicative step. `Formula` multiplies by
/// `exp(−η q̄)` (q̄ is a loss); `Prose` multiplies by `exp(+η q̄)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossSign {
    #[default]
    Formula,
    Prose,
}

impl LossSign {
    pub fn factor(self) -> f64 {
        match self {
            LossSign::Formula => 1.0,
            LossSign::Prose => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnerParams {
    pub horizon: usize,
    pub eta_lr: f64,
    pub epsilon0: f64,
    pub sign: LossSign,
}

impl LearnerParams {
    /// `η_lr = E2/(4nγ)` and `T = ⌈16n²γ² ln k / E2²⌉ = ⌈ln k / η_lr²⌉`.
    pub fn prescribed(n: usize, k: usize, gamma: f64, e2: f64, epsilon: f64, delta: f64) -> Result<Self> {
        if k <= 1 || e2 == 0.0 {
            return Ok(LearnerParams {
                horizon: 1,
                eta_lr: 0.0,
                epsilon0: per_round_epsilon(epsilon, 1, delta)?,
                sign: LossSign::Formula,
            });
        }
        if !(e2 > 0.0) {
            return Err(Error::param("E2 must be positive"));
        }
        let eta_lr = e2 / (4.0 * n as f64 * gamma);
        let horizon = (((k as f64).ln() / (eta_lr * eta_lr)).ceil() as usize).max(1);
        Ok(LearnerParams {
            horizon,
            eta_lr,
            epsilon0: per_round_epsilon(epsilon, horizon, delta)?,
            sign: LossSign::Formula,
        })
    }

    /// Fixed horizon with the matching step `√(ln k / T)`.
    pub fn at_horizon(k: usize, horizon: usize, epsilon: f64, delta: f64) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::param("horizon must be at least 1"));
        }
        Ok(LearnerParams {
            horizon,
            eta_lr: ((k as f64).ln() / horizon as f64).sqrt(),
            epsilon0: per_round_epsilon(epsilon, horizon, delta)?,
            sign: LossSign::Formula,
        })
    }

    pub fn with_sign(self, sign: LossSign) -> Self {
        LearnerParams { sign, ..self }
    }

    /// Average-regret guarantee `E2/(2nγ) = 2η_lr`.
    pub fn regret_bound(&self) -> f64 {
        2.0 * self.eta_lr
    }
}

/// Feasible rows of one user: probability vectors supported on `allowed`
/// with every entry at most `cap`. Opt-out users are pinned to uniform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub allowed: Vec<bool>,
    pub cap: f64,
    pub opt_out: bool,
}

impl ConstraintSet {
    pub fn new(allowed: Vec<bool>, cap: f64) -> Result<Self> {
        let support = allowed.iter().filter(|&&a| a).count();
        if support == 0 {
            return Err(Error::DegenerateSupport);
        }
        if !(cap > 0.0 && cap <= 1.0) || cap * (support as f64) < 1.0 - ROW_TOL {
            return Err(Error::param(format!("cap {cap} infeasible on a support of {support}")));
        }
        Ok(ConstraintSet {
            allowed,
            cap,
            opt_out: false,
        })
    }

    pub fn full(k: usize) -> Self {
        ConstraintSet {
            allowed: vec![true; k],
            cap: 1.0,
            opt_out: false,
        }
    }

    pub fn opt_out(k: usize) -> Self {
        ConstraintSet {
            allowed: vec![true; k],
            cap: 1.0,
            opt_out: true,
        }
    }

    pub fn k(&self) -> usize {
        self.allowed.len()
    }

    pub fn contains(&self, row: &[f64]) -> bool {
        if row.len() != self.k() || (row.iter().sum::<f64>() - 1.0).abs() > ROW_TOL {
            return false;
        }
        if self.opt_out {
            let u = 1.0 / self.k() as f64;
            return row.iter().all(|&x| (x - u).abs() <= ROW_TOL);
        }
        row.iter()
            .zip(&self.allowed)
            .all(|(&x, &ok)| x >= 0.0 && x <= self.cap + ROW_TOL && (ok || x == 0.0))
    }

    /// The projection of the uniform row; the learner's starting point.
    pub fn initial_row(&self) -> Result<Vec<f64>> {
        kl_project(&vec![1.0; self.k()], self)
    }
}

/// KL projection onto the constraint set: zero the disallowed support,
/// normalize, then cap-and-renormalize until no entry exceeds the cap.
pub fn kl_project(weights: &[f64], cset: &ConstraintSet) -> Result<Vec<f64>> {
    let k = cset.k();
    if weights.len() != k {
        return Err(Error::param("weight row length mismatch"));
    }
    if cset.opt_out {
        return Ok(vec![1.0 / k as f64; k]);
    }
    if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(Error::Numerical("weights must be finite and non-negative".into()));
    }
    let mut row: Vec<f64> = weights
        .iter()
        .zip(&cset.allowed)
        .map(|(&w, &ok)| if ok { w } else { 0.0 })
        .collect();
    let total: f64 = row.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateSupport);
    }
    row.iter_mut().for_each(|x| *x /= total);

    let mut capped = vec![false; k];
    loop {
        let over: Vec<usize> = (0..k).filter(|&d| !capped[d] && row[d] > cset.cap).collect();
        if over.is_empty() {
            break;
        }
        for d in over {
            capped[d] = true;
            row[d] = cset.cap;
        }
        let fixed = cset.cap * capped.iter().filter(|&&c| c).count() as f64;
        let free: f64 = (0..k).filter(|&d| !capped[d]).map(|d| row[d]).sum();
        let rest = 1.0 - fixed;
        if rest <= 0.0 {
            for d in (0..k).filter(|&d| !capped[d]) {
                row[d] = 0.0;
            }
            break;
        }
        if !(free > 0.0) {
            return Err(Error::DegenerateSupport);
        }
        for d in (0..k).filter(|&d| !capped[d]) {
            row[d] *= rest / free;
        }
    }
    Ok(row)
}

/// Elementwise `P · exp(−sign·η·q̄)` (unnormalized).
pub fn mw_update(row: &[f64], q_bar: &[f64], eta_lr: f64, sign: LossSign) -> Result<Vec<f64>> {
    if row.len() != q_bar.len() {
        return Err(Error::param("row and loss lengths differ"));
    }
    let s = sign.factor();
    Ok(row.iter().zip(q_bar).map(|(&p, &q)| p * (-s * eta_lr * q).exp()).collect())
}

/// Score of the cross constraint: `γ⟨q_i, P_d⟩ − λ_d`.
pub fn score_f(column: &[f64], q_row: &[f64], lambda: f64, gamma: f64) -> f64 {
    gamma * q_row.iter().zip(column).map(|(q, x)| q * x).sum::<f64>() - lambda
}

/// Grid indices eligible under the ceiling `λ`; the lowest grid value when
/// none is.
pub fn rexp_candidates(grid: &AggregatorGrid, lambda: f64) -> Vec<usize> {
    let c: Vec<usize> = (0..grid.len()).filter(|&g| grid.values[g] <= lambda).collect();
    if c.is_empty() {
        vec![0]
    } else {
        c
    }
}

/// Candidate scores: `−|slack − (r − λ)|`, where `slack = score_f(...)`. The
/// best candidate is the grid value nearest the realized aggregator.
pub fn rexp_scores(grid: &AggregatorGrid, candidates: &[usize], slack: f64, lambda: f64) -> Vec<f64> {
    candidates
        .iter()
        .map(|&g| -(slack - (grid.values[g] - lambda)).abs())
        .collect()
}

/// Connection probability of user `i` on a channel, reconstructed from the
/// published aggregator and its own channel probability.
pub fn connection_probability(c: &Contributions, i: usize, selected: f64, own_prob: f64, gamma: f64) -> f64 {
    let lp = c.log_p(i);
    let others = (selected * c.denominator(i) / gamma - lp * own_prob).min(0.0);
    lp / (lp + others)
}

/// One period's published selections and the derived losses, row-major n×k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Period {
    pub strategy: Vec<f64>,
    pub selected: Vec<f64>,
    pub q_bar: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub n: usize,
    pub k: usize,
    pub periods: Vec<Period>,
}

impl Trajectory {
    pub fn row(&self, t: usize, i: usize) -> &[f64] {
        &self.periods[t].strategy[i * self.k..(i + 1) * self.k]
    }

    pub fn q_bar(&self, t: usize, i: usize) -> &[f64] {
        &self.periods[t].q_bar[i * self.k..(i + 1) * self.k]
    }

    /// The published selections of user `i`, one row per period.
    pub fn billboard(&self, i: usize) -> Vec<Vec<f64>> {
        self.periods
            .iter()
            .map(|p| p.selected[i * self.k..(i + 1) * self.k].to_vec())
            .collect()
    }
}

/// Exponential selection of one aggregator per (user, channel) at period `t`.
pub fn rexp_round(
    profile: &MixedStrategyProfile,
    c: &Contributions,
    lambdas: &[f64],
    grid: &AggregatorGrid,
    epsilon0: f64,
    gamma: f64,
    noise: NoiseControl,
    period: usize,
) -> Result<Vec<f64>> {
    let (n, k) = (profile.n(), profile.k());
    if lambdas.len() != n * k {
        return Err(Error::param("one ceiling per (user, channel) required"));
    }
    let columns: Vec<Vec<f64>> = (0..k).map(|d| profile.column(d)).collect();
    (0..n * k)
        .into_par_iter()
        .map(|cell| {
            let (i, d) = (cell / k, cell % k);
            let q_row = c.row(i);
            let lambda = lambdas[cell];
            let slack = score_f(&columns[d], &q_row, lambda, gamma);
            let cands = rexp_candidates(grid, lambda);
            let scores = rexp_scores(grid, &cands, slack, lambda);
            let mut src = noise.source(&[tag::REXP, i as u64, d as u64, period as u64]);
            let pick = exp_select(&scores, epsilon0, gamma, &mut src)?;
            Ok(grid.values[cands[pick]])
        })
        .collect()
}

/// One user's learning step from its published selections.
pub fn user_step(
    row: &[f64],
    selected: &[f64],
    c: &Contributions,
    i: usize,
    gamma: f64,
    params: &LearnerParams,
    cset: &ConstraintSet,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let q_bar: Vec<f64> = selected
        .iter()
        .zip(row)
        .map(|(&s, &x)| connection_probability(c, i, s, x, gamma))
        .collect();
    if cset.opt_out {
        return Ok((q_bar, row.to_vec()));
    }
    let w = mw_update(row, &q_bar, params.eta_lr, params.sign)?;
    Ok((q_bar, kl_project(&w, cset)?))
}

fn average_rows<'a>(rows: impl Iterator<Item = &'a [f64]>, k: usize, horizon: usize) -> Vec<f64> {
    let mut sum = vec![0.0; k];
    for r in rows {
        for (s, x) in sum.iter_mut().zip(r) {
            *s += x;
        }
    }
    sum.into_iter().map(|s| s / horizon as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnOutcome {
    pub average: MixedStrategyProfile,
    pub trajectory: Trajectory,
}

/// Runs `params.horizon` periods of selection → step → projection and
/// returns the time-averaged profile.
pub fn mw_run(
    c: &Contributions,
    gamma: f64,
    grid: &AggregatorGrid,
    lambdas: &[f64],
    csets: &[ConstraintSet],
    params: &LearnerParams,
    noise: NoiseControl,
) -> Result<LearnOutcome> {
    let n = csets.len();
    if n != c.n() || n == 0 {
        return Err(Error::param("one constraint set per user required"));
    }
    let k = csets[0].k();
    let opt_out: Vec<bool> = csets.iter().map(|s| s.opt_out).collect();
    let rows = csets.iter().map(ConstraintSet::initial_row).collect::<Result<Vec<_>>>()?;
    let mut profile = MixedStrategyProfile::from_rows(&rows, opt_out.clone())?;
    let mut periods = Vec::with_capacity(params.horizon);

    for t in 0..params.horizon {
        let selected = rexp_round(&profile, c, lambdas, grid, params.epsilon0, gamma, noise, t)?;
        let steps = (0..n)
            .into_par_iter()
            .map(|i| user_step(profile.row(i), &selected[i * k..(i + 1) * k], c, i, gamma, params, &csets[i]))
            .collect::<Result<Vec<_>>>()?;
        let strategy: Vec<f64> = (0..n).flat_map(|i| profile.row(i).to_vec()).collect();
        let mut q_bar = Vec::with_capacity(n * k);
        for (i, (q, next)) in steps.into_iter().enumerate() {
            q_bar.extend(q);
            profile.set_row(i, &next)?;
        }
        periods.push(Period {
            strategy,
            selected,
            q_bar,
        });
    }

    let trajectory = Trajectory { n, k, periods };
    let averaged: Vec<Vec<f64>> = (0..n)
        .map(|i| average_rows((0..params.horizon).map(|t| trajectory.row(t, i)), k, params.horizon))
        .collect();
    Ok(LearnOutcome {
        average: MixedStrategyProfile::from_rows(&averaged, opt_out)?,
        trajectory,
    })
}

/// Recomputes user `i`'s rows and averaged suggestion from its constraint
/// set and its published selections only.
pub fn replay_user(
    i: usize,
    c: &Contributions,
    gamma: f64,
    cset: &ConstraintSet,
    params: &LearnerParams,
    billboard: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut row = cset.initial_row()?;
    let mut rows = Vec::with_capacity(billboard.len());
    for selected in billboard {
        let (_, next) = user_step(&row, selected, c, i, gamma, params, cset)?;
        rows.push(std::mem::replace(&mut row, next));
    }
    let avg = average_rows(rows.iter().map(Vec::as_slice), cset.k(), billboard.len());
    Ok((rows, avg))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub learner_loss: f64,
    pub best_fixed_loss: f64,
    pub bound: f64,
    /// `best_fixed_loss + bound − learner_loss`; negative means violated.
    pub slack: f64,
    pub holds: bool,
}

/// Comparator grid of the simplex with step `1/steps`, filtered to `cset`.
pub fn simplex_grid(cset: &ConstraintSet, steps: usize, limit: usize) -> Result<Vec<Vec<f64>>> {
    let k = cset.k();
    // number of compositions of `steps` into k parts
    let count = (1..k).fold(1f64, |acc, j| acc * (steps + j) as f64 / j as f64);
    if count > limit as f64 {
        return Err(Error::Size { size: count as usize, limit });
    }
    let mut out = Vec::new();
    let mut parts = vec![0usize; k];
    fn rec(d: usize, left: usize, parts: &mut Vec<usize>, steps: usize, cset: &ConstraintSet, out: &mut Vec<Vec<f64>>) {
        let k = parts.len();
        if d == k - 1 {
            parts[d] = left;
            let row: Vec<f64> = parts.iter().map(|&u| u as f64 / steps as f64).collect();
            if cset.contains(&row) {
                out.push(row);
            }
            return;
        }
        for u in 0..=left {
            parts[d] = u;
            rec(d + 1, left - u, parts, steps, cset, out);
        }
    }
    rec(0, steps, &mut parts, steps, cset, &mut out);
    Ok(out)
}

pub const CERTIFICATE_LIMIT: usize = 250_000;

/// Checks `(1/T)Σ⟨P_i^t, ℓ^t⟩ ≤ min_P (1/T)Σ⟨P, ℓ^t⟩ + E2/(2nγ)` for user `i`
/// against comparators on a 0.05 simplex grid; `ℓ = sign·q̄`.
pub fn regret_certificate(
    trajectory: &Trajectory,
    i: usize,
    params: &LearnerParams,
    cset: &ConstraintSet,
) -> Result<Certificate> {
    let comparators = simplex_grid(cset, 20, CERTIFICATE_LIMIT)?;
    if comparators.is_empty() {
        return Err(Error::DegenerateSupport);
    }
    let horizon = trajectory.periods.len();
    if horizon == 0 {
        return Err(Error::param("empty trajectory"));
    }
    let s = params.sign.factor();
    let k = trajectory.k;
    let mut cumulative = vec![0.0; k];
    let mut learner = 0.0;
    for t in 0..horizon {
        let loss = trajectory.q_bar(t, i);
        learner += trajectory.row(t, i).iter().zip(loss).map(|(p, q)| p * s * q).sum::<f64>();
        for (acc, q) in cumulative.iter_mut().zip(loss) {
            *acc += s * q;
        }
    }
    let best = comparators
        .iter()
        .map(|p| p.iter().zip(&cumulative).map(|(a, b)| a * b).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    let (learner_loss, best_fixed_loss) = (learner / horizon as f64, best / horizon as f64);
    let bound = params.regret_bound();
    let slack = best_fixed_loss + bound - learner_loss;
    Ok(Certificate {
        learner_loss,
        best_fixed_loss,
        bound,
        slack,
        holds: slack >= -1e-12,
    })
}
