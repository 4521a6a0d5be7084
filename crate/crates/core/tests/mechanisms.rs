use proptest::prelude::*;

use spectrum_game::dp::{
    compose_epsilon, e1_bound, e1_total_bound, exp_weights, per_round_epsilon, spar_cost, NoiseControl, SparOutcome,
};
use spectrum_game::equilibrium::{e2_fixed_point, eta_budget, eta_budget_at_horizon, zeta_bound, BudgetParams};

fn outcome_histogram(costs: &[f64], threshold: f64, eps: f64, gamma: f64, trials: u64, seed: u64) -> Vec<f64> {
    let mut hist = vec![0.0; costs.len() + 1];
    for t in 0..trials {
        let mut src = NoiseControl::new(seed).source(&[t]);
        match spar_cost(costs, threshold, eps, gamma, &mut src).unwrap() {
            SparOutcome::Accepted { index, .. } => hist[index] += 1.0,
            SparOutcome::Exhausted => hist[costs.len()] += 1.0,
        }
    }
    hist.iter().map(|c| c / trials as f64).collect()
}

#[test]
fn sparcost_neighbouring_streams_respect_the_privacy_ratio() {
    let (eps, gamma) = (0.5, 0.1);
    let costs = vec![0.9, 0.75, 0.6, 0.55, 0.7, 0.5, 0.45, 0.8];
    let mut neighbour = costs.clone();
    neighbour[2] += gamma;
    let trials = 100_000;
    // independent seeds for the two streams so the sampling errors are independent
    let a = outcome_histogram(&costs, 0.5, eps, gamma, trials, 11);
    let b = outcome_histogram(&neighbour, 0.5, eps, gamma, trials, 12);
    let bound = eps.exp();
    for j in 0..a.len() {
        for (p, q) in [(a[j], b[j]), (b[j], a[j])] {
            let sigma = (p * (1.0 - p) / trials as f64 + bound * bound * q * (1.0 - q) / trials as f64).sqrt();
            assert!(p <= bound * q + 3.0 * sigma, "outcome {j}: {p} vs e^eps * {q}");
        }
    }
    // the two distributions should actually differ somewhere
    assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 0.01));
}

#[test]
fn disabled_noise_finds_first_item_under_threshold() {
    let mut src = NoiseControl::disabled(0).source(&[]);
    let out = spar_cost(&[3.0, 2.0, 0.5, 0.1], 1.0, 0.1, 0.01, &mut src).unwrap();
    assert_eq!(out, SparOutcome::Accepted { index: 2, noisy_value: 0.5 });
    let out = spar_cost(&[3.0, 2.0], 1.0, 0.1, 0.01, &mut src).unwrap();
    assert_eq!(out, SparOutcome::Exhausted);
}

#[test]
fn reference_budget_values() {
    let p = BudgetParams::reference(1000);
    assert!((e1_total_bound(1000, 15, 1e-3, 1e-3, 0.25, 0.1) - 8.511).abs() < 1e-3);
    assert!((zeta_bound(1000, 50, 1e-3) - 0.3035).abs() < 1e-4);
    let e2 = e2_fixed_point(1000, 15, 1e-3, 0.25, 0.1, 0.25).unwrap();
    assert!((e2.e2 - 2.437).abs() < 5e-3, "{}", e2.e2);
    let b = eta_budget(&p).unwrap();
    assert!((b.eta - (b.zeta + b.alpha + b.e1 + b.e2)).abs() < 1e-12);
    assert!((b.xi - (1e-3 + 2e-3 + b.zeta)).abs() < 1e-12);
}

#[test]
fn composition_reference_value() {
    assert!((per_round_epsilon(0.1, 20, 0.25).unwrap() - 0.006715).abs() < 1e-6);
    assert!((per_round_epsilon(0.3, 1, (-1f64).exp()).unwrap() - 0.3 / 8f64.sqrt()).abs() < 1e-12);
}

proptest! {
    #[test]
    fn bounds_are_pure(n in 2usize..3000, t in 1usize..100) {
        let p = BudgetParams::reference(n);
        prop_assert_eq!(eta_budget_at_horizon(&p, t).unwrap(), eta_budget_at_horizon(&p, t).unwrap());
        prop_assert_eq!(e1_bound(n as f64, 0.25, 0.1, 0.01).to_bits(), e1_bound(n as f64, 0.25, 0.1, 0.01).to_bits());
    }

    #[test]
    fn longer_horizons_shrink_eta(n in 10usize..3000, t in 1usize..200) {
        let p = BudgetParams::reference(n);
        prop_assert!(eta_budget_at_horizon(&p, t + 1).unwrap().eta < eta_budget_at_horizon(&p, t).unwrap().eta);
    }

    #[test]
    fn per_round_epsilon_decreases_in_rounds(eps in 0.01f64..1.0, t in 1usize..500, delta in 0.01f64..0.9) {
        prop_assert!(per_round_epsilon(eps, t + 1, delta).unwrap() < per_round_epsilon(eps, t, delta).unwrap());
    }

    #[test]
    fn composed_per_round_budget_stays_within_target(eps in 0.01f64..1.0, t in 1usize..500, delta in 0.01f64..0.5) {
        let e0 = per_round_epsilon(eps, t, delta).unwrap();
        prop_assert!(compose_epsilon(e0, t, delta) <= eps);
    }

    #[test]
    fn exp_weights_are_a_distribution(scores in prop::collection::vec(-50f64..50.0, 1..12), eps in 0.01f64..5.0) {
        let w = exp_weights(&scores, eps, 1.0).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        // higher score ⇒ higher weight
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if scores[i] > scores[j] {
                    prop_assert!(w[i] >= w[j]);
                }
            }
        }
    }
}
