//! Differential-privacy primitives.
//!
//! Every random draw comes from a ChaCha8 stream keyed by `(seed, tag, ...)`,
//! so results do not depend on call order or thread scheduling.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stream tags; the first key component of every noise stream.
pub mod tag {
    pub const SPARCOST: u64 = 0x5350;
    pub const REXP: u64 = 0x5245;
    pub const SCENARIO: u64 = 0x5343;
    pub const RUN: u64 = 0x5255;
    pub const OPT_IN: u64 = 0x4f49;
    pub const DYNAMICS: u64 = 0x4459;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseControl {
    pub seed: u64,
    /// When false every sampler returns 0 and exponential selection is argmax.
    pub enabled: bool,
}

impl NoiseControl {
    pub fn new(seed: u64) -> Self {
        NoiseControl { seed, enabled: true }
    }

    pub fn disabled(seed: u64) -> Self {
        NoiseControl { seed, enabled: false }
    }

    pub fn source(&self, key: &[u64]) -> NoiseSource {
        NoiseSource {
            enabled: self.enabled,
            rng: keyed_rng(self.seed, key),
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a seed with a key path into a 64-bit stream seed.
pub fn stream_seed(seed: u64, key: &[u64]) -> u64 {
    key.iter().fold(splitmix(seed), |h, &k| splitmix(h ^ splitmix(k)))
}

pub fn keyed_rng(seed: u64, key: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, key))
}

/// One keyed noise stream.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    enabled: bool,
    rng: ChaCha8Rng,
}

impl NoiseSource {
    pub fn enabled(&self) -> bool {
        self.enabled
    }

    /// Uniform draw in [0, 1); ignores the enabled flag.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn laplace(&mut self, scale: f64) -> Result<f64> {
        sample_laplace(scale, self)
    }
}

/// Laplace(0, b) by inverse CDF.
pub fn sample_laplace(scale: f64, noise: &mut NoiseSource) -> Result<f64> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::param(format!("Laplace scale must be positive, got {scale}")));
    }
    if !noise.enabled {
        return Ok(0.0);
    }
    // u in (-1/2, 1/2]; reject the single endpoint that maps to infinity
    loop {
        let u = 0.5 - noise.rng.random::<f64>();
        let a = 1.0 - 2.0 * u.abs();
        if a > 0.0 {
            return Ok(-scale * u.signum() * a.ln());
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SparOutcome {
    /// First item whose noisy cost fell at or below the noisy threshold;
    /// every earlier item was answered ⊥.
    Accepted { index: usize, noisy_value: f64 },
    Exhausted,
}

/// Sparse-vector search over a stream of γ-sensitive costs.
///
/// Threshold noise is `Lap(2γ/ε)`, per-item noise `Lap(4γ/ε)`.
pub fn spar_cost(
    costs: &[f64],
    threshold: f64,
    epsilon: f64,
    gamma: f64,
    noise: &mut NoiseSource,
) -> Result<SparOutcome> {
    if !(epsilon > 0.0) || !(gamma > 0.0) {
        return Err(Error::param("SparCost needs positive epsilon and sensitivity"));
    }
    if costs.is_empty() {
        return Ok(SparOutcome::Exhausted);
    }
    let noisy_threshold = threshold + noise.laplace(2.0 * gamma / epsilon)?;
    let item_scale = 4.0 * gamma / epsilon;
    for (index, &c) in costs.iter().enumerate() {
        let v = c + noise.laplace(item_scale)?;
        if v <= noisy_threshold {
            return Ok(SparOutcome::Accepted { index, noisy_value: v });
        }
    }
    Ok(SparOutcome::Exhausted)
}

/// The accuracy event: an accepted answer lies within `e1` of its true cost
/// and every item answered ⊥ has true cost at least `threshold - e1`.
pub fn spar_accuracy_event(costs: &[f64], threshold: f64, outcome: &SparOutcome, e1: f64) -> bool {
    let rejected = match *outcome {
        SparOutcome::Accepted { index, noisy_value } => {
            if (noisy_value - costs[index]).abs() > e1 {
                return false;
            }
            &costs[..index]
        }
        SparOutcome::Exhausted => costs,
    };
    rejected.iter().all(|&c| c >= threshold - e1)
}

/// `8γ(ln N + ln(4/β))/ε` for a stream of `N` costs.
pub fn e1_bound(stream_len: f64, beta: f64, epsilon: f64, gamma: f64) -> f64 {
    8.0 * gamma * (stream_len.ln() + (4.0 / beta).ln()) / epsilon
}

/// `8γ(k ln(nγ/α) + ln(4/β))/ε`: the SparCost error over all channels.
pub fn e1_total_bound(n: usize, k: usize, gamma: f64, alpha: f64, beta: f64, epsilon: f64) -> f64 {
    let range = n as f64 * gamma / alpha;
    8.0 * gamma * (k as f64 * range.ln() + (4.0 / beta).ln()) / epsilon
}

/// Normalized selection probabilities `∝ exp(ε·score/(2Δf))`.
pub fn exp_weights(scores: &[f64], epsilon: f64, sensitivity: f64) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::param("exponential selection over an empty candidate set"));
    }
    if !(sensitivity > 0.0) || !(epsilon >= 0.0) {
        return Err(Error::param("exponential selection needs Δf > 0 and ε ≥ 0"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numerical("non-finite selection score".into()));
    }
    let c = epsilon / (2.0 * sensitivity);
    let top = scores.iter().fold(f64::NEG_INFINITY, |a, &s| a.max(s));
    let w: Vec<f64> = scores.iter().map(|&s| (c * (s - top)).exp()).collect();
    let z: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / z).collect())
}

/// Draws an index with the exponential-mechanism distribution. With noise
/// disabled this is the (first) argmax.
pub fn exp_select(scores: &[f64], epsilon: f64, sensitivity: f64, noise: &mut NoiseSource) -> Result<usize> {
    let w = exp_weights(scores, epsilon, sensitivity)?;
    if !noise.enabled {
        let mut best = 0;
        for (j, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = j;
            }
        }
        return Ok(best);
    }
    let u = noise.uniform();
    let mut acc = 0.0;
    for (j, &x) in w.iter().enumerate() {
        acc += x;
        if u < acc {
            return Ok(j);
        }
    }
    Ok(w.len() - 1)
}

/// Score shortfall that exponential selection exceeds with probability ≤ β.
pub fn exp_utility_bound(sensitivity: f64, range_size: f64, beta: f64, epsilon: f64) -> f64 {
    2.0 * sensitivity * (range_size / beta).ln() / epsilon
}

/// Advanced composition: `ε√(2T ln(1/δ')) + Tε(e^ε − 1)`.
pub fn compose_epsilon(epsilon: f64, rounds: usize, delta_prime: f64) -> f64 {
    let t = rounds as f64;
    epsilon * (2.0 * t * (1.0 / delta_prime).ln()).sqrt() + t * epsilon * epsilon.exp_m1()
}

/// Per-round budget `ε/√(8T ln(1/δ))` whose T-fold composition is (ε, δ)-DP.
pub fn per_round_epsilon(epsilon: f64, rounds: usize, delta: f64) -> Result<f64> {
    if !(epsilon > 0.0) || rounds == 0 {
        return Err(Error::param("per-round budget needs ε > 0 and T ≥ 1"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::param(format!("δ must lie in (0, 1), got {delta}")));
    }
    if epsilon > 1.0 {
        warn!("per-round budget derived from ε = {epsilon} > 1; the composition guarantee assumes ε ≤ 1");
    }
    Ok(epsilon / (8.0 * rounds as f64 * (1.0 / delta).ln()).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
    pub epsilon0: f64,
    pub rounds: usize,
}

impl PrivacyBudget {
    pub fn derive(epsilon: f64, delta: f64, rounds: usize) -> Result<Self> {
        Ok(PrivacyBudget {
            epsilon,
            delta,
            epsilon0: per_round_epsilon(epsilon, rounds, delta)?,
            rounds,
        })
    }

    /// SparCost and the REXP rounds each spend ε.
    pub fn total_epsilon(&self) -> f64 {
        2.0 * self.epsilon
    }
}
