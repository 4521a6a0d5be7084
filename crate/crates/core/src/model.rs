//! Network and game mathematics: Shannon rates, throughput, the normalized
//! individual contention contributions and the pure/mixed aggregators built
//! from them, and the proportional-fair channel utilities.
//!
//! Logarithms are natural everywhere except inside the Shannon rate, which is
//! in bits and uses `log2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clamp for contention probabilities; the upper clamp is `1 - P_MIN`.
pub const P_MIN: f64 = 1e-6;

/// Tolerance used for row-stochastic checks.
pub const ROW_TOL: f64 = 1e-9;

pub fn clamp_contention(p: f64) -> f64 {
    p.clamp(P_MIN, 1.0 - P_MIN)
}

/// `B * log2(1 + power * gain / noise)` in bit/s.
pub fn shannon_rate(bandwidth_hz: f64, tx_power_w: f64, gain: f64, noise_w: f64) -> Result<f64> {
    if !(bandwidth_hz > 0.0) {
        return Err(Error::param(format!("bandwidth must be positive, got {bandwidth_hz}")));
    }
    if !(noise_w > 0.0) {
        return Err(Error::param(format!("noise power must be positive, got {noise_w}")));
    }
    if !(tx_power_w > 0.0) {
        return Err(Error::param(format!("transmit power must be positive, got {tx_power_w}")));
    }
    if !(gain >= 0.0) {
        return Err(Error::param(format!("channel gain must be non-negative, got {gain}")));
    }
    Ok(bandwidth_hz * (tx_power_w * gain / noise_w).ln_1p() / std::f64::consts::LN_2)
}

/// Per-(user, channel) and per-(user, action, channel) radio parameters, stored
/// row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadioParams {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub bandwidth_hz: Vec<f64>,
    pub tx_power_w: Vec<f64>,
    pub channel_gain: Vec<f64>,
    pub noise_w: Vec<f64>,
}

impl RadioParams {
    /// Same bandwidth, power and noise everywhere; gains given per (user, channel).
    pub fn homogeneous(
        n: usize,
        m: usize,
        k: usize,
        bandwidth_hz: f64,
        tx_power_w: f64,
        noise_w: f64,
        channel_gain: Vec<f64>,
    ) -> Result<Self> {
        let radio = RadioParams {
            n,
            m,
            k,
            bandwidth_hz: vec![bandwidth_hz; n * k],
            tx_power_w: vec![tx_power_w; n * m * k],
            channel_gain,
            noise_w: vec![noise_w; n * k],
        };
        radio.validate()?;
        Ok(radio)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m, k) = (self.n, self.m, self.k);
        if self.bandwidth_hz.len() != n * k
            || self.channel_gain.len() != n * k
            || self.noise_w.len() != n * k
            || self.tx_power_w.len() != n * m * k
        {
            return Err(Error::param("radio parameter arrays do not match (n, m, k)"));
        }
        if self.bandwidth_hz.iter().any(|&b| !(b > 0.0)) {
            return Err(Error::param("bandwidths must be positive"));
        }
        if self.noise_w.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::param("noise powers must be positive"));
        }
        if self.tx_power_w.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::param("transmit powers must be positive"));
        }
        if self.channel_gain.iter().any(|&g| !(g >= 0.0)) {
            return Err(Error::param("channel gains must be non-negative"));
        }
        Ok(())
    }

    pub fn rate(&self, user: usize, action: usize, channel: usize) -> Result<f64> {
        let uc = user * self.k + channel;
        shannon_rate(
            self.bandwidth_hz[uc],
            self.tx_power_w[(user * self.m + action) * self.k + channel],
            self.channel_gain[uc],
            self.noise_w[uc],
        )
    }
}

/// One entry of a user's action set: a transmit-power selector (the index into
/// [`RadioParams::tx_power_w`]) plus the contention probability it implies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub index: usize,
    pub contention_prob: f64,
}

impl ActionSpec {
    pub fn new(index: usize, contention_prob: f64) -> Self {
        ActionSpec {
            index,
            contention_prob: clamp_contention(contention_prob),
        }
    }
}

/// Channel contention probabilities of all users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentionProfile(Vec<f64>);

impl ContentionProfile {
    /// Clamps every entry into `[P_MIN, 1 - P_MIN]`.
    pub fn new(values: Vec<f64>) -> Self {
        ContentionProfile(values.into_iter().map(clamp_contention).collect())
    }

    /// Rejects anything outside the open interval instead of clamping.
    pub fn strict(values: Vec<f64>) -> Result<Self> {
        check_open_unit(&values)?;
        Ok(ContentionProfile(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Copy with user `i` switched to contention probability `p`.
    pub fn with_user(&self, i: usize, p: f64) -> Self {
        let mut values = self.0.clone();
        values[i] = clamp_contention(p);
        ContentionProfile(values)
    }
}

fn check_open_unit(p: &[f64]) -> Result<()> {
    match p.iter().position(|&x| !(x > 0.0 && x < 1.0)) {
        Some(l) => Err(Error::Singularity(format!(
            "contention probability p[{l}] = {} outside (0, 1)",
            p[l]
        ))),
        None => Ok(()),
    }
}

/// `C * p_i * prod_{l != i, l contends} (1 - p_l)`.
///
/// `contenders = None` takes the product over every other user.
pub fn pure_throughput(rate: f64, i: usize, p: &[f64], contenders: Option<&[bool]>) -> Result<f64> {
    check_open_unit(p)?;
    if i >= p.len() {
        return Err(Error::param(format!("user {i} out of range")));
    }
    if let Some(mask) = contenders {
        if mask.len() != p.len() {
            return Err(Error::param("contender mask length mismatch"));
        }
    }
    let others: f64 = p
        .iter()
        .enumerate()
        .filter(|&(l, _)| l != i && contenders.is_none_or(|mask| mask[l]))
        .map(|(_, &pl)| 1.0 - pl)
        .product();
    Ok(rate * p[i] * others)
}

/// Precomputed logs of a contention profile; evaluates the normalized
/// contributions `q_i(p_l)` in O(1) each.
#[derive(Debug, Clone)]
pub struct Contributions {
    log_p: Vec<f64>,
    log_q: Vec<f64>,
    sum_log_q: f64,
}

impl Contributions {
    pub fn new(p: &ContentionProfile) -> Result<Self> {
        check_open_unit(p.as_slice())?;
        let log_p: Vec<f64> = p.as_slice().iter().map(|x| x.ln()).collect();
        let log_q: Vec<f64> = p.as_slice().iter().map(|x| (-x).ln_1p()).collect();
        let sum_log_q = log_q.iter().sum();
        Ok(Contributions {
            log_p,
            log_q,
            sum_log_q,
        })
    }

    pub fn n(&self) -> usize {
        self.log_p.len()
    }

    pub fn log_p(&self, i: usize) -> f64 {
        self.log_p[i]
    }

    /// `log p_i + sum_{l != i} log(1 - p_l)`; strictly negative.
    pub fn denominator(&self, i: usize) -> f64 {
        self.log_p[i] + (self.sum_log_q - self.log_q[i])
    }

    /// Normalized contribution of user `l` from user `i`'s perspective, in [0, 1].
    pub fn q(&self, i: usize, l: usize) -> f64 {
        let num = if l == i { self.log_p[i] } else { self.log_q[l] };
        num / self.denominator(i)
    }

    /// All contributions from user `i`'s perspective.
    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.n()).map(|l| self.q(i, l)).collect()
    }
}

pub fn q_contrib(i: usize, l: usize, p: &ContentionProfile) -> Result<f64> {
    if i >= p.len() || l >= p.len() {
        return Err(Error::param("user index out of range"));
    }
    Ok(Contributions::new(p)?.q(i, l))
}

/// `gamma * sum of q_i(p_l)` over the users contending on the channel.
pub fn aggregator_pure(i: usize, contenders: &[bool], p: &ContentionProfile, gamma: f64) -> Result<f64> {
    if contenders.len() != p.len() {
        return Err(Error::param("contender mask length mismatch"));
    }
    let c = Contributions::new(p)?;
    Ok(gamma
        * contenders
            .iter()
            .enumerate()
            .filter(|&(_, &on)| on)
            .map(|(l, _)| c.q(i, l))
            .sum::<f64>())
}

/// `gamma * sum_l q_i(p_l) * P_{l,d}` for one channel's probability column.
pub fn aggregator_mixed(i: usize, p: &ContentionProfile, column: &[f64], gamma: f64) -> Result<f64> {
    let c = Contributions::new(p)?;
    mixed_with(&c, i, column, gamma)
}

pub(crate) fn mixed_with(c: &Contributions, i: usize, column: &[f64], gamma: f64) -> Result<f64> {
    if column.len() != c.n() {
        return Err(Error::param(format!(
            "strategy column has {} entries for {} users",
            column.len(),
            c.n()
        )));
    }
    if column.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
        return Err(Error::param("strategy probabilities must lie in [0, 1]"));
    }
    Ok(gamma * column.iter().enumerate().map(|(l, &x)| c.q(i, l) * x).sum::<f64>())
}

/// Proportional-fair channel utility `ln C + Q`.
pub fn channel_utility(rate: f64, aggregator: f64) -> Result<f64> {
    if !(rate > 0.0) {
        return Err(Error::Singularity(format!("log of non-positive rate {rate}")));
    }
    Ok(rate.ln() + aggregator)
}

/// n x k row-stochastic channel-access matrix plus opt-out markers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedStrategyProfile {
    n: usize,
    k: usize,
    probs: Vec<f64>,
    opt_out: Vec<bool>,
}

impl MixedStrategyProfile {
    pub fn uniform(n: usize, k: usize) -> Self {
        MixedStrategyProfile {
            n,
            k,
            probs: vec![1.0 / k as f64; n * k],
            opt_out: vec![false; n],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>], opt_out: Vec<bool>) -> Result<Self> {
        let n = rows.len();
        if opt_out.len() != n {
            return Err(Error::param("opt-out markers do not match row count"));
        }
        let k = rows.first().map_or(0, Vec::len);
        if k == 0 {
            return Err(Error::param("strategy profile needs at least one channel"));
        }
        let mut probs = Vec::with_capacity(n * k);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::param(format!("row {i} has {} entries, expected {k}", row.len())));
            }
            if !is_stochastic(row) {
                return Err(Error::param(format!("row {i} is not a probability vector")));
            }
            probs.extend_from_slice(row);
        }
        Ok(MixedStrategyProfile { n, k, probs, opt_out })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn column(&self, d: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.probs[i * self.k + d]).collect()
    }

    pub fn get(&self, i: usize, d: usize) -> f64 {
        self.probs[i * self.k + d]
    }

    pub fn is_opt_out(&self, i: usize) -> bool {
        self.opt_out[i]
    }

    pub fn opt_out(&self) -> &[bool] {
        &self.opt_out
    }

    pub fn set_row(&mut self, i: usize, row: &[f64]) -> Result<()> {
        if row.len() != self.k {
            return Err(Error::param("row length mismatch"));
        }
        self.probs[i * self.k..(i + 1) * self.k].copy_from_slice(row);
        Ok(())
    }

    pub fn set_opt_out(&mut self, i: usize, flag: bool) {
        self.opt_out[i] = flag;
    }

    /// Copy with every opt-out row replaced by the uniform `1/k` row.
    pub fn with_opt_out_uniform(&self) -> Self {
        let mut out = self.clone();
        let u = 1.0 / self.k as f64;
        for i in (0..self.n).filter(|&i| self.opt_out[i]) {
            out.probs[i * self.k..(i + 1) * self.k].fill(u);
        }
        out
    }
}

pub fn is_stochastic(row: &[f64]) -> bool {
    row.iter().all(|&x| (0.0..=1.0).contains(&x)) && (row.iter().sum::<f64>() - 1.0).abs() <= ROW_TOL
}

/// Static description of a game instance. `played[i]` is the action user `i`
/// currently plays; its contention probability feeds the profile `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameSpec {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub gamma: f64,
    pub alpha: f64,
    pub radio: RadioParams,
    pub actions: Vec<Vec<ActionSpec>>,
    pub played: Vec<usize>,
}

impl GameSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.k == 0 {
            return Err(Error::param("n, m and k must be positive"));
        }
        if !(self.gamma > 0.0) || !(self.alpha > 0.0) {
            return Err(Error::param("gamma and alpha must be positive"));
        }
        if self.alpha > self.n as f64 * self.gamma * (1.0 + 1e-12) {
            return Err(Error::param("alpha exceeds n * gamma; the aggregator grid would be empty"));
        }
        if (self.radio.n, self.radio.m, self.radio.k) != (self.n, self.m, self.k) {
            return Err(Error::param("radio dimensions disagree with the game"));
        }
        self.radio.validate()?;
        if self.actions.len() != self.n || self.actions.iter().any(|a| a.len() != self.m) {
            return Err(Error::param("every user needs exactly m actions"));
        }
        if self.played.len() != self.n || self.played.iter().any(|&j| j >= self.m) {
            return Err(Error::param("played actions out of range"));
        }
        Ok(())
    }

    pub fn contention_profile(&self) -> ContentionProfile {
        ContentionProfile::new(
            (0..self.n)
                .map(|i| self.actions[i][self.played[i]].contention_prob)
                .collect(),
        )
    }

    /// Rate of user `i` playing action `j` on channel `d`.
    pub fn rate(&self, i: usize, j: usize, d: usize) -> Result<f64> {
        self.radio.rate(i, self.actions[i][j].index, d)
    }
}

/// Expected utility of user `i` under action `j` when it randomizes over
/// channels with its own row of `profile`; everyone else's rows shape the
/// per-channel aggregators.
pub fn expected_utility(
    game: &GameSpec,
    i: usize,
    j: usize,
    p: &ContentionProfile,
    profile: &MixedStrategyProfile,
) -> Result<f64> {
    let c = Contributions::new(p)?;
    expected_utility_with(game, &c, i, j, profile)
}

pub(crate) fn expected_utility_with(
    game: &GameSpec,
    c: &Contributions,
    i: usize,
    j: usize,
    profile: &MixedStrategyProfile,
) -> Result<f64> {
    let mut total = 0.0;
    for d in 0..profile.k() {
        let w = profile.get(i, d);
        if w == 0.0 {
            continue;
        }
        let q = mixed_with(c, i, &profile.column(d), game.gamma)?;
        total += w * channel_utility(game.rate(i, j, d)?, q)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn toy_game(n: usize, m: usize, k: usize, gamma: f64) -> GameSpec {
        let gains = (0..n * k).map(|x| 0.5 + 0.1 * x as f64).collect();
        let radio = RadioParams::homogeneous(n, m, k, 20e6, 0.1, 1e-13, gains).unwrap();
        GameSpec {
            n,
            m,
            k,
            gamma,
            alpha: gamma,
            radio,
            actions: (0..n)
                .map(|_| (0..m).map(|j| ActionSpec::new(j, 0.2 + 0.3 * j as f64)).collect())
                .collect(),
            played: vec![0; n],
        }
    }

    #[test]
    fn shannon_rate_reference_value() {
        let r = shannon_rate(20e6, 0.1, 1.0, 1e-13).unwrap();
        // 20e6 * log2(1 + 1e12), log2(1e12) = 39.8631
        assert_relative_eq!(r, 7.9726e8, max_relative = 1e-4);
        assert_eq!(shannon_rate(20e6, 0.1, 0.0, 1e-13).unwrap(), 0.0);
        let half = shannon_rate(10e6, 0.1, 1.0, 1e-13).unwrap();
        assert_relative_eq!(r, 2.0 * half, max_relative = 1e-15);
    }

    #[test]
    fn shannon_rate_rejects_bad_parameters() {
        assert!(matches!(shannon_rate(0.0, 0.1, 1.0, 1e-13), Err(Error::Parameter(_))));
        assert!(matches!(shannon_rate(1.0, 0.1, 1.0, -1.0), Err(Error::Parameter(_))));
        assert!(shannon_rate(1.0, 0.1, -0.5, 1.0).is_err());
    }

    #[test]
    fn shannon_rate_monotone() {
        let base = shannon_rate(1e6, 0.1, 1.0, 1e-10).unwrap();
        assert!(shannon_rate(1e6, 0.2, 1.0, 1e-10).unwrap() > base);
        assert!(shannon_rate(1e6, 0.1, 2.0, 1e-10).unwrap() > base);
        assert!(shannon_rate(1e6, 0.1, 1.0, 2e-10).unwrap() < base);
    }

    #[test]
    fn throughput_cases() {
        assert_relative_eq!(pure_throughput(5.0, 0, &[0.3], None).unwrap(), 1.5);
        assert_relative_eq!(pure_throughput(8.0, 0, &[0.5, 0.5], None).unwrap(), 2.0);
        let near_one = pure_throughput(8.0, 0, &[0.5, 1.0 - 1e-12], None).unwrap();
        assert!(near_one < 1e-10);
        assert!(pure_throughput(8.0, 0, &[0.5, 1.0], None).is_err());
        // masked-out users do not enter the product
        let masked = pure_throughput(8.0, 0, &[0.5, 0.9, 0.5], Some(&[true, false, true])).unwrap();
        assert_relative_eq!(masked, 2.0);
    }

    #[test]
    fn q_contrib_symmetric_pair() {
        let p = ContentionProfile::new(vec![0.5, 0.5]);
        assert_relative_eq!(q_contrib(0, 0, &p).unwrap(), 0.5, epsilon = 1e-15);
        assert_relative_eq!(q_contrib(0, 1, &p).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn q_contrib_three_user_oracle() {
        // log-ratio oracle written out term by term
        let p = [0.1f64, 0.5, 0.9];
        let p_prof = ContentionProfile::new(p.to_vec());
        for i in 0..3 {
            let mut denom = p[i].ln();
            for l in 0..3 {
                if l != i {
                    denom += (1.0 - p[l]).ln();
                }
            }
            for l in 0..3 {
                let num = if l == i { p[i].ln() } else { (1.0 - p[l]).ln() };
                assert_relative_eq!(q_contrib(i, l, &p_prof).unwrap(), num / denom, max_relative = 1e-12);
            }
        }
        // user 0: ln 0.1 / (ln 0.1 + ln 0.5 + ln 0.1)
        let expected = 0.1f64.ln() / (0.1f64.ln() + 0.5f64.ln() + 0.1f64.ln());
        assert_relative_eq!(q_contrib(0, 0, &p_prof).unwrap(), expected, max_relative = 1e-12);
    }

    #[test]
    fn q_contrib_singular_inputs() {
        assert!(matches!(
            ContentionProfile::strict(vec![0.0, 0.5]),
            Err(Error::Singularity(_))
        ));
        // clamping keeps the profile usable
        let p = ContentionProfile::new(vec![0.0, 1.0]);
        assert!(q_contrib(0, 1, &p).unwrap().is_finite());
    }

    #[test]
    fn aggregator_pure_cases() {
        let p = ContentionProfile::new(vec![0.2, 0.4, 0.7, 0.9]);
        let gamma = 0.25;
        assert_relative_eq!(
            aggregator_pure(1, &[true; 4], &p, gamma).unwrap(),
            gamma,
            epsilon = 1e-12
        );
        assert_eq!(aggregator_pure(1, &[false; 4], &p, gamma).unwrap(), 0.0);
        let mask = [true, false, true, false];
        let direct = gamma * (q_contrib(1, 0, &p).unwrap() + q_contrib(1, 2, &p).unwrap());
        assert_relative_eq!(aggregator_pure(1, &mask, &p, gamma).unwrap(), direct, max_relative = 1e-12);
    }

    #[test]
    fn aggregator_mixed_reductions() {
        let p = ContentionProfile::new(vec![0.2, 0.4, 0.7]);
        let gamma = 1.0 / 3.0;
        let pure = aggregator_pure(0, &[true; 3], &p, gamma).unwrap();
        assert_relative_eq!(aggregator_mixed(0, &p, &[1.0; 3], gamma).unwrap(), pure, epsilon = 1e-14);
        assert_eq!(aggregator_mixed(0, &p, &[0.0; 3], gamma).unwrap(), 0.0);
        let k = 4.0;
        assert_relative_eq!(
            aggregator_mixed(0, &p, &[1.0 / k; 3], gamma).unwrap(),
            pure / k,
            epsilon = 1e-14
        );
        assert!(aggregator_mixed(0, &p, &[0.5; 2], gamma).is_err());
    }

    #[test]
    fn channel_utility_is_additive() {
        let rate = shannon_rate(20e6, 0.1, 1.0, 1e-13).unwrap();
        let u1 = channel_utility(rate, 0.3).unwrap();
        let u2 = channel_utility(rate, 0.1).unwrap();
        assert_relative_eq!(u1 - u2, 0.2, epsilon = 1e-12);
        // ln(7.9726e8) + gamma / 2 with gamma = 0.5
        assert_relative_eq!(channel_utility(rate, 0.25).unwrap(), 20.4967 + 0.25, max_relative = 1e-4);
        assert!(matches!(channel_utility(0.0, 0.1), Err(Error::Singularity(_))));
    }

    #[test]
    fn expected_utility_degenerate_and_uniform_rows() {
        let game = toy_game(3, 2, 3, 1.0 / 3.0);
        let p = game.contention_profile();
        let mut prof = MixedStrategyProfile::uniform(3, 3);
        let per_channel: Vec<f64> = (0..3)
            .map(|d| {
                let q = aggregator_mixed(0, &p, &prof.column(d), game.gamma).unwrap();
                channel_utility(game.rate(0, 0, d).unwrap(), q).unwrap()
            })
            .collect();
        let mean = per_channel.iter().sum::<f64>() / 3.0;
        assert_relative_eq!(expected_utility(&game, 0, 0, &p, &prof).unwrap(), mean, max_relative = 1e-14);

        prof.set_row(0, &[0.0, 1.0, 0.0]).unwrap();
        let q = aggregator_mixed(0, &p, &prof.column(1), game.gamma).unwrap();
        let u = channel_utility(game.rate(0, 0, 1).unwrap(), q).unwrap();
        assert_relative_eq!(expected_utility(&game, 0, 0, &p, &prof).unwrap(), u, max_relative = 1e-14);
    }

    #[test]
    fn expected_utility_weighted_sum_oracle() {
        let game = toy_game(4, 2, 3, 0.25);
        let p = game.contention_profile();
        let rows = vec![
            vec![0.2, 0.5, 0.3],
            vec![0.6, 0.1, 0.3],
            vec![0.0, 0.0, 1.0],
            vec![0.25, 0.25, 0.5],
        ];
        let prof = MixedStrategyProfile::from_rows(&rows, vec![false; 4]).unwrap();
        for i in 0..4 {
            let mut oracle = 0.0;
            for d in 0..3 {
                let col: Vec<f64> = rows.iter().map(|r| r[d]).collect();
                let mut agg = 0.0;
                for l in 0..4 {
                    agg += q_contrib(i, l, &p).unwrap() * col[l];
                }
                oracle += rows[i][d] * (game.rate(i, 1, d).unwrap().ln() + game.gamma * agg);
            }
            assert_relative_eq!(expected_utility(&game, i, 1, &p, &prof).unwrap(), oracle, max_relative = 1e-13);
        }
    }

    #[test]
    fn profile_validation() {
        assert!(MixedStrategyProfile::from_rows(&[vec![0.5, 0.6]], vec![false]).is_err());
        let mut prof = MixedStrategyProfile::from_rows(&[vec![0.9, 0.1], vec![0.3, 0.7]], vec![false, true]).unwrap();
        let fixed = prof.with_opt_out_uniform();
        assert_eq!(fixed.row(1), &[0.5, 0.5]);
        assert_eq!(fixed.row(0), &[0.9, 0.1]);
        prof.set_opt_out(1, false);
        assert!(!prof.is_opt_out(1));
    }

    fn profile_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.001f64..0.999, 1..12)
    }

    proptest! {
        #[test]
        fn contributions_normalize(p in profile_strategy()) {
            let prof = ContentionProfile::new(p.clone());
            let c = Contributions::new(&prof).unwrap();
            for i in 0..p.len() {
                let s: f64 = (0..p.len()).map(|l| c.q(i, l)).sum();
                prop_assert!((s - 1.0).abs() < 1e-9);
                for l in 0..p.len() {
                    let q = c.q(i, l);
                    prop_assert!((0.0..=1.0).contains(&q));
                }
            }
        }

        #[test]
        fn mixed_aggregator_in_range(
            p in profile_strategy(),
            seedcol in prop::collection::vec(0.0f64..=1.0, 12),
            gamma in 0.01f64..1.0,
        ) {
            let n = p.len();
            let prof = ContentionProfile::new(p);
            let col = &seedcol[..n];
            for i in 0..n {
                let q = aggregator_mixed(i, &prof, col, gamma).unwrap();
                prop_assert!(q >= 0.0 && q <= n as f64 * gamma + 1e-12);
            }
        }

        #[test]
        fn unilateral_change_moves_aggregator_by_at_most_gamma(
            p in prop::collection::vec(0.1f64..0.9, 2..10),
            who in 0usize..10,
            newp in 0.1f64..0.9,
            mask in prop::collection::vec(any::<bool>(), 10),
        ) {
            let n = p.len();
            let who = who % n;
            let gamma = 1.0 / n as f64;
            let before = ContentionProfile::new(p);
            let after = before.with_user(who, newp);
            for i in 0..n {
                let a = aggregator_pure(i, &mask[..n], &before, gamma).unwrap();
                let b = aggregator_pure(i, &mask[..n], &after, gamma).unwrap();
                prop_assert!((a - b).abs() <= gamma + 1e-12);
            }
        }

        #[test]
        fn utility_is_one_lipschitz(q1 in 0.0f64..2.0, q2 in 0.0f64..2.0, rate in 1.0f64..1e9) {
            let d = channel_utility(rate, q1).unwrap() - channel_utility(rate, q2).unwrap();
            prop_assert!((d.abs() - (q1 - q2).abs()).abs() < 1e-9);
        }

        #[test]
        fn expected_utility_bounded_by_channel_extremes(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let game = toy_game(3, 2, 2, 1.0 / 3.0);
            let p = game.contention_profile();
            let rows = vec![vec![a, 1.0 - a], vec![b, 1.0 - b], vec![0.9, 0.1]];
            let prof = MixedStrategyProfile::from_rows(&rows, vec![false; 3]).unwrap();
            let u = expected_utility(&game, 0, 0, &p, &prof).unwrap();
            let per: Vec<f64> = (0..2)
                .map(|d| {
                    let q = aggregator_mixed(0, &p, &prof.column(d), game.gamma).unwrap();
                    channel_utility(game.rate(0, 0, d).unwrap(), q).unwrap()
                })
                .collect();
            let lo = per[0].min(per[1]);
            let hi = per[0].max(per[1]);
            prop_assert!(u >= lo - 1e-9 && u <= hi + 1e-9);
        }
    }
}
