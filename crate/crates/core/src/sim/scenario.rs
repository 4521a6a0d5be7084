//! Scenario description and sampling.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::dp::{keyed_rng, tag};
use crate::error::{Error, Result};
use crate::learning::LossSign;
use crate::mediator::EpochConfig;
use crate::model::{ActionSpec, GameSpec, RadioParams};

/// dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

fn tenths() -> Vec<f64> {
    (1..=9).map(|x| x as f64 / 10.0).collect()
}

fn hundredths() -> Vec<f64> {
    (1..=99).map(|x| x as f64 / 100.0).collect()
}

/// Flat scenario configuration. Every field has a default, so a config file
/// only lists what it changes; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub hex_side_m: f64,
    /// Number of hexagonal cells (1 or 7).
    pub cells: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub beta: f64,
    /// Defaults to 1/n.
    pub gamma: Option<f64>,
    /// Defaults to 1/n.
    pub alpha: Option<f64>,
    pub bandwidth_hz: f64,
    pub tx_power_mw: f64,
    pub noise_dbm: f64,
    pub contention_pool: Vec<f64>,
    pub strategy_pool: Vec<f64>,
    /// Fixed learning horizon; unset uses the prescribed one.
    pub horizon: Option<usize>,
    pub optin_ratio: f64,
    pub runs: usize,
    pub threshold: Option<f64>,
    pub threshold_quantile: f64,
    pub loss_sign: LossSign,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            seed: 1,
            n: 200,
            k: 15,
            m: 50,
            hex_side_m: 500.0,
            cells: 7,
            epsilon: 0.1,
            delta: 0.25,
            beta: 0.25,
            gamma: None,
            alpha: None,
            bandwidth_hz: 20e6,
            tx_power_mw: 100.0,
            noise_dbm: -100.0,
            contention_pool: tenths(),
            strategy_pool: hundredths(),
            horizon: None,
            optin_ratio: 0.5,
            runs: 100,
            threshold: None,
            threshold_quantile: 0.25,
            loss_sign: LossSign::Formula,
        }
    }
}

impl ScenarioSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: ScenarioSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma.unwrap_or(1.0 / self.n as f64)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(1.0 / self.n as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.k == 0 || self.m == 0 {
            return Err(Error::Config("n, k and m must be positive".into()));
        }
        if !(self.epsilon > 0.0) || !(self.delta > 0.0 && self.delta < 1.0) || !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::Config("need ε > 0 and δ, β in (0, 1)".into()));
        }
        if self.contention_pool.is_empty() || self.contention_pool.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::Config("contention pool must be non-empty with entries in (0, 1)".into()));
        }
        if self.strategy_pool.is_empty() || self.strategy_pool.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::Config("strategy pool must be non-empty and positive".into()));
        }
        if !(0.0..=1.0).contains(&self.optin_ratio) {
            return Err(Error::Config("optin_ratio must lie in [0, 1]".into()));
        }
        if !matches!(self.cells, 1 | 7) {
            return Err(Error::Config("cells must be 1 or 7".into()));
        }
        if !(self.hex_side_m > 0.0) {
            return Err(Error::Config("hex_side_m must be positive".into()));
        }
        if self.alpha() > self.n as f64 * self.gamma() * (1.0 + 1e-12) || !(self.alpha() > 0.0) {
            return Err(Error::Config("need 0 < α ≤ nγ".into()));
        }
        Ok(())
    }

    pub fn epoch_config(&self) -> EpochConfig {
        EpochConfig {
            beta: self.beta,
            epsilon: self.epsilon,
            delta: self.delta,
            horizon: self.horizon,
            threshold: self.threshold,
            threshold_quantile: self.threshold_quantile,
            sign: self.loss_sign,
        }
    }
}

/// Flat-top hexagon of side `side` centred at the origin.
pub fn in_hexagon(x: f64, y: f64, side: f64) -> bool {
    let s3 = 3f64.sqrt();
    y.abs() <= s3 / 2.0 * side + 1e-9 && s3 * x.abs() + y.abs() <= s3 * side + 1e-9
}

/// Hexagonal cells with per-cell channel counts and user membership.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HexWorld {
    pub side: f64,
    pub cell_side: f64,
    /// Axial coordinates of each cell.
    pub axial: Vec<(i32, i32)>,
    pub centers: Vec<(f64, f64)>,
    pub channels: Vec<usize>,
    pub positions: Vec<(f64, f64)>,
    pub cell_of: Vec<usize>,
}

impl HexWorld {
    /// Cells in the given axial positions with explicit channel counts and
    /// memberships (positions are placed at cell centres).
    pub fn from_cells(axial: Vec<(i32, i32)>, channels: Vec<usize>, cell_of: Vec<usize>) -> Result<Self> {
        if axial.len() != channels.len() || axial.is_empty() {
            return Err(Error::param("one channel count per cell required"));
        }
        if cell_of.iter().any(|&c| c >= axial.len()) {
            return Err(Error::param("user assigned to a missing cell"));
        }
        let centers: Vec<(f64, f64)> = axial.iter().map(|&a| axial_center(a, 1.0)).collect();
        Ok(HexWorld {
            side: 1.0,
            cell_side: 1.0,
            positions: cell_of.iter().map(|&c| centers[c]).collect(),
            axial,
            centers,
            channels,
            cell_of,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.axial.len()
    }

    pub fn loads(&self) -> Vec<usize> {
        let mut l = vec![0; self.n_cells()];
        for &c in &self.cell_of {
            l[c] += 1;
        }
        l
    }

    pub fn members(&self, cell: usize) -> Vec<usize> {
        (0..self.cell_of.len()).filter(|&u| self.cell_of[u] == cell).collect()
    }

    /// Cells sharing an edge with `cell`.
    pub fn neighbours(&self, cell: usize) -> Vec<usize> {
        let (q, r) = self.axial[cell];
        (0..self.n_cells())
            .filter(|&o| {
                let (q2, r2) = self.axial[o];
                let (dq, dr) = (q2 - q, r2 - r);
                (dq.abs() + dr.abs() + (dq + dr).abs()) == 2
            })
            .collect()
    }
}

/// Centre of a flat-top hex cell in axial coordinates.
fn axial_center((q, r): (i32, i32), side: f64) -> (f64, f64) {
    let s3 = 3f64.sqrt();
    (side * 1.5 * q as f64, side * s3 * (r as f64 + q as f64 / 2.0))
}

fn layout(cells: usize) -> Vec<(i32, i32)> {
    let mut v = vec![(0, 0)];
    if cells == 7 {
        v.extend([(1, 0), (1, -1), (0, -1), (-1, 0), (-1, 1), (0, 1)]);
    }
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub game: GameSpec,
    pub world: HexWorld,
    /// Rows each user would submit (and play if it opts out).
    pub submitted: Vec<Vec<f64>>,
}

/// Samples a scenario: positions uniform in the hexagon, Exp(1) gains,
/// contention probabilities and strategy weights from the pools.
pub fn gen_scenario(spec: &ScenarioSpec) -> Result<Scenario> {
    spec.validate()?;
    let (n, m, k) = (spec.n, spec.m, spec.k);
    let mut rng = keyed_rng(spec.seed, &[tag::SCENARIO]);

    let side = spec.hex_side_m;
    let positions: Vec<(f64, f64)> = (0..n)
        .map(|_| loop {
            let x = (rng.random::<f64>() * 2.0 - 1.0) * side;
            let y = (rng.random::<f64>() * 2.0 - 1.0) * side;
            if in_hexagon(x, y, side) {
                break (x, y);
            }
        })
        .collect();
    let axial = layout(spec.cells);
    // equal-area cells
    let cell_side = side / (axial.len() as f64).sqrt();
    let centers: Vec<(f64, f64)> = axial.iter().map(|&a| axial_center(a, cell_side)).collect();
    let cell_of = positions
        .iter()
        .map(|&(x, y)| {
            let d = |c: &(f64, f64)| (c.0 - x).powi(2) + (c.1 - y).powi(2);
            (0..centers.len())
                .min_by(|&a, &b| d(&centers[a]).total_cmp(&d(&centers[b])))
                .unwrap_or(0)
        })
        .collect();
    let world = HexWorld {
        side,
        cell_side,
        channels: vec![k; axial.len()],
        axial,
        centers,
        positions,
        cell_of,
    };

    let gains: Vec<f64> = (0..n * k).map(|_| Exp1.sample(&mut rng)).collect();
    let radio = RadioParams::homogeneous(
        n,
        m,
        k,
        spec.bandwidth_hz,
        spec.tx_power_mw / 1000.0,
        dbm_to_watts(spec.noise_dbm),
        gains,
    )?;
    let pool = &spec.contention_pool;
    let actions: Vec<Vec<ActionSpec>> = (0..n)
        .map(|_| {
            (0..m)
                .map(|j| ActionSpec::new(j, pool[rng.random_range(0..pool.len())]))
                .collect()
        })
        .collect();
    let played = (0..n).map(|_| rng.random_range(0..m)).collect();
    let spool = &spec.strategy_pool;
    let submitted = (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..k).map(|_| spool[rng.random_range(0..spool.len())]).collect();
            let z: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / z).collect()
        })
        .collect();

    let game = GameSpec {
        n,
        m,
        k,
        gamma: spec.gamma(),
        alpha: spec.alpha(),
        radio,
        actions,
        played,
    };
    game.validate()?;
    Ok(Scenario { game, world, submitted })
}
