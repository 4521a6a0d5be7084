//! The weak mediator: collects reports, runs one epoch of private target
//! selection and learning, and hands out non-binding suggestions.

use log::warn;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dp::{keyed_rng, stream_seed, tag, NoiseControl, PrivacyBudget};
use crate::equilibrium::{
    build_grid, channel_best_responses, eta_budget, eta_budget_at_horizon, measure_regret, pilot_threshold,
    select_targets, ApproximationBudget, BudgetParams, RegretReport, SetValuedTarget, REGRET_LIMIT,
};
use crate::error::{Error, Result};
use crate::learning::{mw_run, ConstraintSet, LearnerParams, LossSign, Trajectory};
use crate::model::{expected_utility_with, is_stochastic, Contributions, GameSpec, MixedStrategyProfile};
use crate::sim::scenario::{gen_scenario, ScenarioSpec};

/// A user's submission; `row = None` is ⊥ (opt-out).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub user: usize,
    pub row: Option<Vec<f64>>,
}

/// Opt-in users pass their rows through; opt-out users become ⊥. Malformed
/// rows are downgraded to ⊥ with a warning.
pub fn collect_reports(profiles: &[Vec<f64>], opt_in: &[bool]) -> Result<Vec<Report>> {
    if profiles.len() != opt_in.len() {
        return Err(Error::param("one opt-in flag per profile required"));
    }
    let k = profiles.first().map_or(0, Vec::len);
    Ok(profiles
        .iter()
        .zip(opt_in)
        .enumerate()
        .map(|(user, (row, &inside))| {
            let row = if !inside {
                None
            } else if row.len() != k || !is_stochastic(row) {
                warn!("user {user} submitted a malformed row; treating as opt-out");
                None
            } else {
                Some(row.clone())
            };
            Report { user, row }
        })
        .collect())
}

/// Numeric profile of the reports; ⊥ becomes the uniform row.
pub fn reports_profile(reports: &[Report], k: usize) -> Result<MixedStrategyProfile> {
    let mut sorted: Vec<&Report> = reports.iter().collect();
    sorted.sort_by_key(|r| r.user);
    if sorted.iter().enumerate().any(|(i, r)| r.user != i) {
        return Err(Error::param("reports must cover users 0..n exactly once"));
    }
    let uniform = vec![1.0 / k as f64; k];
    let rows: Vec<Vec<f64>> = sorted
        .iter()
        .map(|r| r.row.clone().unwrap_or_else(|| uniform.clone()))
        .collect();
    MixedStrategyProfile::from_rows(&rows, sorted.iter().map(|r| r.row.is_none()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochConfig {
    pub beta: f64,
    pub epsilon: f64,
    pub delta: f64,
    /// Fixed learning horizon; `None` uses the prescribed one.
    pub horizon: Option<usize>,
    /// Explicit SparCost threshold; `None` uses the pilot quantile.
    pub threshold: Option<f64>,
    pub threshold_quantile: f64,
    pub sign: LossSign,
}

impl Default for EpochConfig {
    fn default() -> Self {
        EpochConfig {
            beta: 0.25,
            epsilon: 0.1,
            delta: 0.25,
            horizon: None,
            threshold: None,
            threshold_quantile: 0.25,
            sign: LossSign::Formula,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SuggestionKind {
    /// User-specific suggestion for an opt-in user.
    Personal,
    /// The fixed uniform suggestion for opt-out users.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub user: usize,
    pub kind: SuggestionKind,
    pub row: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyLedger {
    pub sparcost_epsilon: f64,
    pub rexp_epsilon: f64,
    pub epsilon0: f64,
    pub rounds: usize,
    pub delta: f64,
    pub total_epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochResult {
    pub suggestions: Vec<Suggestion>,
    pub average: MixedStrategyProfile,
    pub trajectory: Trajectory,
    pub targets: SetValuedTarget,
    pub constraints: Vec<ConstraintSet>,
    pub budget: ApproximationBudget,
    pub learner: LearnerParams,
    pub threshold: f64,
    pub fallbacks: usize,
    pub privacy: PrivacyLedger,
    /// Present when the instance is small enough for the exhaustive oracle.
    pub regret: Option<RegretReport>,
    pub seed: u64,
}

/// Channels where the played action is in the ξ-best-response set. Falls back
/// to every channel the action can use at all.
fn constraint_for(game: &GameSpec, i: usize, targets: &SetValuedTarget, xi: f64) -> Result<ConstraintSet> {
    let j = game.played[i];
    let mut allowed = Vec::with_capacity(game.k);
    for d in 0..game.k {
        allowed.push(channel_best_responses(game, i, d, targets.q_hat(i, d), xi)?.contains(&j));
    }
    if !allowed.iter().any(|&a| a) {
        warn!("user {i}: played action is not a best response anywhere; allowing every usable channel");
        allowed = (0..game.k)
            .map(|d| game.rate(i, j, d).map(|r| r > 0.0))
            .collect::<Result<_>>()?;
    }
    ConstraintSet::new(allowed, 1.0)
}

/// One mediator epoch: grid → SparCost targets → constraint sets → learning.
pub fn run_epoch(game: &GameSpec, reports: &[Report], cfg: &EpochConfig, noise: NoiseControl) -> Result<EpochResult> {
    game.validate()?;
    let (n, k) = (game.n, game.k);
    if reports.len() != n {
        return Err(Error::param(format!("{} reports for {n} users", reports.len())));
    }
    let profile = reports_profile(reports, k)?;
    let p = game.contention_profile();
    let c = Contributions::new(&p)?;
    let grid = build_grid(n, game.gamma, game.alpha)?;

    let bp = BudgetParams {
        n,
        m: game.m,
        k,
        gamma: game.gamma,
        alpha: game.alpha,
        beta: cfg.beta,
        epsilon: cfg.epsilon,
        delta: cfg.delta,
    };
    let (budget, learner) = match cfg.horizon {
        Some(t) => (eta_budget_at_horizon(&bp, t)?, LearnerParams::at_horizon(k, t, cfg.epsilon, cfg.delta)?),
        None => {
            let b = eta_budget(&bp)?;
            let l = LearnerParams::prescribed(n, k, game.gamma, b.e2, cfg.epsilon, cfg.delta)?;
            (b, l)
        }
    };
    let learner = learner.with_sign(cfg.sign);

    let threshold = match cfg.threshold {
        Some(t) => t,
        None => pilot_threshold(&grid, &p, &profile, game.gamma, cfg.threshold_quantile)?,
    };
    let targets = select_targets(&grid, &p, &profile, game.gamma, threshold, cfg.epsilon, noise)?;
    let fallbacks = targets.fallback_count();

    let constraints = (0..n)
        .into_par_iter()
        .map(|i| {
            if profile.is_opt_out(i) {
                Ok(ConstraintSet::opt_out(k))
            } else {
                constraint_for(game, i, &targets, budget.xi)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let lambdas: Vec<f64> = targets.q_hat.iter().map(|q| q + game.alpha + budget.e1).collect();
    let learned = mw_run(&c, game.gamma, &grid, &lambdas, &constraints, &learner, noise)?;

    let opt_in: Vec<bool> = (0..n).map(|i| !profile.is_opt_out(i)).collect();
    let suggestions = issue_suggestions(&learned.average, &opt_in);
    let regret = if n * game.m * k <= REGRET_LIMIT {
        let rows: Vec<Vec<f64>> = suggestions.iter().map(|s| s.row.clone()).collect();
        Some(measure_regret(game, &MixedStrategyProfile::from_rows(&rows, profile.opt_out().to_vec())?)?)
    } else {
        None
    };

    let privacy = PrivacyBudget::derive(cfg.epsilon, cfg.delta, learner.horizon)?;
    Ok(EpochResult {
        suggestions,
        average: learned.average,
        trajectory: learned.trajectory,
        targets,
        constraints,
        budget,
        learner,
        threshold,
        fallbacks,
        privacy: PrivacyLedger {
            sparcost_epsilon: cfg.epsilon,
            rexp_epsilon: cfg.epsilon,
            epsilon0: learner.epsilon0,
            rounds: learner.horizon,
            delta: cfg.delta,
            total_epsilon: privacy.total_epsilon(),
        },
        regret,
        seed: noise.seed,
    })
}

/// Personal rows for opt-in users, the fixed uniform row for everyone else.
pub fn issue_suggestions(average: &MixedStrategyProfile, opt_in: &[bool]) -> Vec<Suggestion> {
    let k = average.k();
    opt_in
        .iter()
        .enumerate()
        .map(|(user, &inside)| {
            if inside {
                Suggestion {
                    user,
                    kind: SuggestionKind::Personal,
                    row: average.row(user).to_vec(),
                }
            } else {
                Suggestion {
                    user,
                    kind: SuggestionKind::Fixed,
                    row: vec![1.0 / k as f64; k],
                }
            }
        })
        .collect()
}

/// Expected utility of every user when opt-in users follow their suggestion
/// and opt-out users play their submitted rows.
pub fn realized_utilities(
    game: &GameSpec,
    submitted: &[Vec<f64>],
    suggestions: &[Suggestion],
) -> Result<Vec<f64>> {
    let rows: Vec<Vec<f64>> = suggestions
        .iter()
        .map(|s| match s.kind {
            SuggestionKind::Personal => s.row.clone(),
            SuggestionKind::Fixed => submitted[s.user].clone(),
        })
        .collect();
    let played = MixedStrategyProfile::from_rows(&rows, vec![false; rows.len()])?;
    let c = Contributions::new(&game.contention_profile())?;
    (0..game.n)
        .map(|i| expected_utility_with(game, &c, i, game.played[i], &played))
        .collect()
}

/// Per-run group means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupMeans {
    pub opt_in: Option<f64>,
    pub opt_out: Option<f64>,
}

impl GroupMeans {
    pub fn from_utilities(utilities: &[f64], opt_in: &[bool]) -> Self {
        let mean = |flag: bool| {
            let xs: Vec<f64> = utilities
                .iter()
                .zip(opt_in)
                .filter(|(_, &f)| f == flag)
                .map(|(&u, _)| u)
                .collect();
            (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
        };
        GroupMeans {
            opt_in: mean(true),
            opt_out: mean(false),
        }
    }

    pub fn gap(&self) -> Option<f64> {
        Some(self.opt_in? - self.opt_out?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthfulnessSummary {
    pub ratio_in: f64,
    pub runs: usize,
    pub mean_opt_in: Option<f64>,
    pub mean_opt_out: Option<f64>,
    pub gap: Option<f64>,
    /// One-sided paired t statistic for `gap > 0`.
    pub t_stat: Option<f64>,
    pub p_value: Option<f64>,
    pub per_run: Vec<GroupMeans>,
}

/// Aggregates per-run group means into means, gap and a one-sided paired
/// t-test of `opt-in > opt-out`.
pub fn summarize_runs(ratio_in: f64, per_run: Vec<GroupMeans>) -> Result<TruthfulnessSummary> {
    if per_run.is_empty() {
        return Err(Error::param("no runs to summarize"));
    }
    let runs = per_run.len();
    let avg = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    let mean_opt_in = avg(per_run.iter().filter_map(|g| g.opt_in).collect());
    let mean_opt_out = avg(per_run.iter().filter_map(|g| g.opt_out).collect());
    let gaps: Vec<f64> = per_run.iter().filter_map(GroupMeans::gap).collect();
    let gap = avg(gaps.clone());
    let (t_stat, p_value) = match gap {
        Some(g) if gaps.len() >= 2 => {
            let df = (gaps.len() - 1) as f64;
            let sd = (gaps.iter().map(|x| (x - g).powi(2)).sum::<f64>() / df).sqrt();
            if sd > 0.0 {
                let t = g / (sd / (gaps.len() as f64).sqrt());
                let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Numerical(e.to_string()))?;
                (Some(t), Some(1.0 - dist.cdf(t)))
            } else {
                (None, None)
            }
        }
        _ => (None, None),
    };
    Ok(TruthfulnessSummary {
        ratio_in,
        runs,
        mean_opt_in,
        mean_opt_out,
        gap,
        t_stat,
        p_value,
        per_run,
    })
}

/// Seed of run `r` derived from the scenario seed.
pub fn run_seed(seed: u64, run: usize) -> u64 {
    stream_seed(seed, &[tag::RUN, run as u64])
}

/// Opt-in flags with `round(ratio·n)` opt-in users picked by a seeded shuffle.
pub fn opt_in_flags(n: usize, ratio: f64, seed: u64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut keyed_rng(seed, &[tag::OPT_IN]));
    let count = (ratio * n as f64).round() as usize;
    let mut flags = vec![false; n];
    for &u in order.iter().take(count) {
        flags[u] = true;
    }
    flags
}

/// Independent runs at one opt-in ratio: opt-in users follow their
/// suggestion, opt-out users play their submitted rows.
pub fn truthfulness_experiment(
    scenario: &ScenarioSpec,
    ratio_in: f64,
    runs: usize,
    noise_enabled: bool,
) -> Result<TruthfulnessSummary> {
    if runs == 0 {
        return Err(Error::param("at least one run required"));
    }
    let per_run = (0..runs)
        .into_par_iter()
        .map(|r| {
            let seed = run_seed(scenario.seed, r);
            let spec = ScenarioSpec { seed, ..scenario.clone() };
            let sc = gen_scenario(&spec)?;
            let flags = opt_in_flags(spec.n, ratio_in, seed);
            let reports = collect_reports(&sc.submitted, &flags)?;
            let noise = NoiseControl { seed, enabled: noise_enabled };
            let epoch = run_epoch(&sc.game, &reports, &spec.epoch_config(), noise)?;
            let utilities = realized_utilities(&sc.game, &sc.submitted, &epoch.suggestions)?;
            Ok(GroupMeans::from_utilities(&utilities, &flags))
        })
        .collect::<Result<Vec<_>>>()?;
    summarize_runs(ratio_in, per_run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::random_tiny_game;

    #[test]
    fn reports_pass_through_and_downgrade() {
        let rows = vec![vec![0.5, 0.5], vec![0.9, 0.3], vec![0.2, 0.8]];
        let reps = collect_reports(&rows, &[true, true, true]).unwrap();
        assert_eq!(reps[0].row, Some(vec![0.5, 0.5]));
        assert_eq!(reps[1].row, None);
        assert_eq!(reps[2].row, Some(vec![0.2, 0.8]));
        let all_out = collect_reports(&rows, &[false; 3]).unwrap();
        assert!(all_out.iter().all(|r| r.row.is_none()));
        let prof = reports_profile(&all_out, 2).unwrap();
        assert!(prof.rows().iter().all(|r| r == &vec![0.5, 0.5]));
        assert!(collect_reports(&rows, &[true]).is_err());
    }

    #[test]
    fn single_user_single_channel() {
        let game = random_tiny_game(1, 1, 2, 1, 0.5);
        let reps = collect_reports(&[vec![1.0]], &[true]).unwrap();
        let r = run_epoch(&game, &reps, &EpochConfig::default(), NoiseControl::disabled(0)).unwrap();
        assert_eq!(r.suggestions[0].row, vec![1.0]);
        assert_eq!(r.suggestions[0].kind, SuggestionKind::Personal);
    }

    #[test]
    fn all_opt_out_gets_fixed_rows() {
        let game = random_tiny_game(2, 3, 2, 2, 0.1);
        let reps = collect_reports(&vec![vec![0.1, 0.9]; 3], &[false; 3]).unwrap();
        let r = run_epoch(&game, &reps, &EpochConfig::default(), NoiseControl::new(3)).unwrap();
        for s in &r.suggestions {
            assert_eq!(s.kind, SuggestionKind::Fixed);
            assert_eq!(s.row, vec![0.5, 0.5]);
        }
        assert_eq!(r.privacy.total_epsilon, 0.2);
    }

    #[test]
    fn epoch_is_deterministic() {
        let game = random_tiny_game(5, 3, 2, 2, 0.1);
        let reps = collect_reports(&[vec![0.3, 0.7], vec![0.6, 0.4], vec![0.5, 0.5]], &[true, true, false]).unwrap();
        let a = run_epoch(&game, &reps, &EpochConfig::default(), NoiseControl::new(11)).unwrap();
        let b = run_epoch(&game, &reps, &EpochConfig::default(), NoiseControl::new(11)).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.budget.eta, a.budget.zeta + a.budget.alpha + a.budget.e1 + a.budget.e2);
    }

    #[test]
    fn summary_statistics() {
        let runs: Vec<GroupMeans> = [1.0, 2.0, 3.0, 4.0]
            .iter()
            .map(|&g| GroupMeans {
                opt_in: Some(10.0 + g),
                opt_out: Some(10.0),
            })
            .collect();
        let s = summarize_runs(0.5, runs).unwrap();
        assert_eq!(s.gap, Some(2.5));
        // t = 2.5 / (sd/2), sd = sqrt(5/3)
        let t = 2.5 / ((5.0f64 / 3.0).sqrt() / 2.0);
        assert!((s.t_stat.unwrap() - t).abs() < 1e-12);
        assert!(s.p_value.unwrap() < 0.05);
        let vac = summarize_runs(
            0.0,
            vec![GroupMeans { opt_in: None, opt_out: Some(1.0) }; 3],
        )
        .unwrap();
        assert_eq!(vac.gap, None);
        assert_eq!(vac.mean_opt_in, None);
        assert!(summarize_runs(0.5, vec![]).is_err());
    }

    #[test]
    fn group_means() {
        let g = GroupMeans::from_utilities(&[1.0, 2.0, 4.0], &[true, false, true]);
        assert_eq!(g.opt_in, Some(2.5));
        assert_eq!(g.opt_out, Some(2.0));
        assert_eq!(g.gap(), Some(0.5));
        assert_eq!(GroupMeans::from_utilities(&[1.0], &[true]).gap(), None);
    }
}
