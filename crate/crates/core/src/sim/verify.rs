//! Quick property suites behind the `verify` command. Each check is a reduced
//! version of the corresponding test and reports what it measured.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::dp::{e1_bound, exp_select, exp_weights, keyed_rng, spar_accuracy_event, spar_cost, NoiseControl};
use crate::equilibrium::{aggregative_regret, enumerate_pure_profiles, standard_regret};
use crate::error::Result;
use crate::learning::regret_certificate;
use crate::mediator::{collect_reports, run_epoch};
use crate::sim::scenario::{gen_scenario, ScenarioSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check {
        name: name.into(),
        passed,
        detail,
    }
}

fn tiny(seed: u64, n: usize, k: usize, alpha: Option<f64>) -> ScenarioSpec {
    ScenarioSpec {
        seed,
        n,
        k,
        m: 2,
        alpha,
        ..Default::default()
    }
}

fn lemmas(seed: u64) -> Result<Check> {
    let mut bad = 0;
    let mut profiles = 0;
    for g in 0..3 {
        let game = gen_scenario(&tiny(seed.wrapping_add(g), 3, 2, Some(0.1)))?.game;
        for s in enumerate_pure_profiles(3, game.m, 2)? {
            let std = (0..3).map(|i| standard_regret(&game, i, &s)).collect::<Result<Vec<_>>>()?;
            let agg = (0..3).map(|i| aggregative_regret(&game, i, &s)).collect::<Result<Vec<_>>>()?;
            bad += (0..3).filter(|&i| agg[i] > std[i] + game.gamma + 1e-12).count();
            let eta = agg.iter().copied().fold(0.0, f64::max);
            bad += std.iter().any(|&r| r > eta + game.gamma + 1e-12) as usize;
            profiles += 1;
        }
    }
    Ok(check(
        "best-response lemmas",
        bad == 0,
        format!("{profiles} profiles, {bad} violations"),
    ))
}

fn certificates(seed: u64, instances: u64) -> Result<Check> {
    let mut failures = 0;
    let mut users = 0;
    for s in 0..instances {
        let spec = tiny(seed.wrapping_add(s), 5, 3, None);
        let sc = gen_scenario(&spec)?;
        let reports = collect_reports(&sc.submitted, &vec![true; spec.n])?;
        let ep = run_epoch(&sc.game, &reports, &spec.epoch_config(), NoiseControl::new(spec.seed))?;
        for i in 0..spec.n {
            failures += !regret_certificate(&ep.trajectory, i, &ep.learner, &ep.constraints[i])?.holds as usize;
            users += 1;
        }
    }
    Ok(check(
        "no-regret certificate",
        failures == 0,
        format!("{failures} violations over {users} users"),
    ))
}

fn oracle(seed: u64, instances: u64, beta: f64) -> Result<Check> {
    let mut within = 0;
    for s in 0..instances {
        let spec = tiny(seed.wrapping_add(s), 3, 2, Some(0.1));
        let sc = gen_scenario(&spec)?;
        let reports = collect_reports(&sc.submitted, &vec![true; spec.n])?;
        let ep = run_epoch(&sc.game, &reports, &spec.epoch_config(), NoiseControl::new(spec.seed))?;
        if let Some(r) = &ep.regret {
            within += (r.max <= ep.budget.eta) as usize;
        }
    }
    let frac = within as f64 / instances as f64;
    Ok(check(
        "exhaustive regret within eta",
        frac >= 1.0 - beta,
        format!("{within}/{instances} instances"),
    ))
}

fn mechanisms(seed: u64) -> Result<Vec<Check>> {
    let n = 20_000;
    let mut src = NoiseControl::new(seed).source(&[1]);
    let xs = (0..n).map(|_| src.laplace(1.0)).collect::<Result<Vec<_>>>()?;
    let mut worst: f64 = 0.0;
    let mut tails_ok = true;
    for t in [0.5f64, 1.0, 2.0] {
        let expect = (-t).exp();
        let freq = xs.iter().filter(|x| x.abs() >= t).count() as f64 / n as f64;
        let z = (freq - expect).abs() / (expect * (1.0 - expect) / n as f64).sqrt();
        tails_ok &= z <= 3.0;
        worst = worst.max(z);
    }

    let scores = [0.0, 0.5, 1.0, 1.5, 2.0];
    let w = exp_weights(&scores, 1.0, 1.0)?;
    let mut counts = [0f64; 5];
    let mut sel = NoiseControl::new(seed).source(&[2]);
    for _ in 0..n {
        counts[exp_select(&scores, 1.0, 1.0, &mut sel)?] += 1.0;
    }
    let chi: f64 = (0..5).map(|j| (counts[j] - w[j] * n as f64).powi(2) / (w[j] * n as f64)).sum();
    let p = ChiSquared::new(4.0).map_or(0.0, |d| 1.0 - d.cdf(chi));

    let (beta, eps, gamma) = (0.25, 0.1, 0.001);
    let e1 = e1_bound(100.0, beta, eps, gamma);
    let mut good = 0;
    for trial in 0..200u64 {
        use rand::Rng;
        let mut rng = keyed_rng(seed, &[3, trial]);
        let costs: Vec<f64> = (0..100).map(|_| rng.random::<f64>()).collect();
        let mut src = NoiseControl::new(seed).source(&[4, trial]);
        let out = spar_cost(&costs, 0.2, eps, gamma, &mut src)?;
        good += spar_accuracy_event(&costs, 0.2, &out, e1) as usize;
    }
    let freq = good as f64 / 200.0;

    Ok(vec![
        check("laplace tails", tails_ok, format!("worst deviation {worst:.2} sigma")),
        check("exponential selection", p > 0.01, format!("chi2 {chi:.2}, p {p:.3}")),
        check(
            "sparcost accuracy",
            freq >= 1.0 - beta / 2.0,
            format!("event frequency {freq:.3}"),
        ),
    ])
}

fn determinism(seed: u64) -> Result<Check> {
    let spec = ScenarioSpec {
        seed,
        n: 16,
        k: 4,
        m: 3,
        ..Default::default()
    };
    let run = || -> Result<_> {
        let sc = gen_scenario(&spec)?;
        let reports = collect_reports(&sc.submitted, &vec![true; spec.n])?;
        run_epoch(&sc.game, &reports, &spec.epoch_config(), NoiseControl::new(seed))
    };
    let same = run()? == run()?;
    Ok(check("determinism", same, format!("repeat run identical: {same}")))
}

/// Runs every suite with seeds derived from `seed`.
pub fn run_verification(seed: u64) -> Result<Vec<Check>> {
    let mut out = vec![lemmas(seed)?, certificates(seed, 10)?, oracle(seed, 40, 0.25)?];
    out.extend(mechanisms(seed)?);
    out.push(determinism(seed)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass() {
        for c in run_verification(3).unwrap() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
