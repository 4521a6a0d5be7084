//! Run records and their CSV/JSON persistence.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::equilibrium::{ApproximationBudget, RegretReport};
use crate::error::{Error, Result};
use crate::learning::LearnerParams;
use crate::mediator::{EpochResult, PrivacyLedger, SuggestionKind};
use crate::sim::experiments::{ChannelsRow, DynamicsRow, OptinRow, UsersRow};
use crate::sim::scenario::ScenarioSpec;

pub const SIMULATE_HEADER: &str = "user,kind,channel,probability";
pub const PERIODS_HEADER: &str = "period,mean_selected,mean_q_bar,mean_step";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionRow {
    pub user: usize,
    pub kind: SuggestionKind,
    pub channel: usize,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodMetric {
    pub period: usize,
    pub mean_selected: f64,
    pub mean_q_bar: f64,
    /// Mean absolute change of strategy entries into the next period.
    pub mean_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub budget: ApproximationBudget,
    pub learner: LearnerParams,
    pub privacy: PrivacyLedger,
    pub threshold: f64,
    pub fallbacks: usize,
    pub periods: Vec<PeriodMetric>,
    pub suggestions: Vec<SuggestionRow>,
    pub utilities: Vec<f64>,
    pub regret: Option<RegretReport>,
}

impl SimulateReport {
    pub fn from_epoch(epoch: &EpochResult, utilities: Vec<f64>) -> Self {
        let traj = &epoch.trajectory;
        let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len().max(1) as f64;
        let periods = traj
            .periods
            .iter()
            .enumerate()
            .map(|(t, p)| {
                let next = traj.periods.get(t + 1).map(|q| q.strategy.as_slice());
                let step = next.map_or(0.0, |nx| {
                    mean(&p.strategy.iter().zip(nx).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>())
                });
                PeriodMetric {
                    period: t,
                    mean_selected: mean(&p.selected),
                    mean_q_bar: mean(&p.q_bar),
                    mean_step: step,
                }
            })
            .collect();
        let suggestions = epoch
            .suggestions
            .iter()
            .flat_map(|s| {
                s.row.iter().enumerate().map(move |(d, &x)| SuggestionRow {
                    user: s.user,
                    kind: s.kind,
                    channel: d,
                    probability: x,
                })
            })
            .collect();
        SimulateReport {
            budget: epoch.budget,
            learner: epoch.learner,
            privacy: epoch.privacy,
            threshold: epoch.threshold,
            fallbacks: epoch.fallbacks,
            periods,
            suggestions,
            utilities,
            regret: epoch.regret.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "rows", rename_all = "lowercase")]
pub enum Table {
    Users(Vec<UsersRow>),
    Channels(Vec<ChannelsRow>),
    Optin(Vec<OptinRow>),
    Dynamics(Vec<DynamicsRow>),
    Simulate(Box<SimulateReport>),
}

/// One experiment's inputs and outputs. Replaying `scenario` (which carries
/// the seed) regenerates `table` exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub experiment: String,
    pub scenario: ScenarioSpec,
    pub noise: bool,
    pub table: Table,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let fmt_err = |e: csv::Error| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r).map_err(fmt_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the record into `dir` and returns the files written. CSV output
/// holds the main table (simulate adds a per-period file); JSON holds the
/// full record.
pub fn write_records(record: &RunRecord, dir: &Path, format: Format) -> Result<Vec<PathBuf>> {
    let stem = &record.experiment;
    match format {
        Format::Json => {
            let path = dir.join(format!("{stem}.json"));
            let mut w = create(&path)?;
            serde_json::to_writer_pretty(&mut w, record).map_err(|e| Error::Format {
                path: path.clone(),
                message: e.to_string(),
            })?;
            w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(&path, e))?;
            Ok(vec![path])
        }
        Format::Csv => {
            let path = dir.join(format!("{stem}.csv"));
            match &record.table {
                Table::Users(rows) => write_csv(&path, rows)?,
                Table::Channels(rows) => write_csv(&path, rows)?,
                Table::Optin(rows) => write_csv(&path, rows)?,
                Table::Dynamics(rows) => write_csv(&path, rows)?,
                Table::Simulate(rep) => {
                    write_csv(&path, &rep.suggestions)?;
                    let periods = dir.join(format!("{stem}_periods.csv"));
                    write_csv(&periods, &rep.periods)?;
                    return Ok(vec![path, periods]);
                }
            }
            Ok(vec![path])
        }
    }
}

pub fn read_json(path: &Path) -> Result<RunRecord> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Reads a CSV file written by [`write_records`] back into rows.
pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    r.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::experiments::{experiment_users, USERS_HEADER};

    fn users_record() -> RunRecord {
        RunRecord {
            experiment: "users".into(),
            scenario: ScenarioSpec::default(),
            noise: true,
            table: Table::Users(experiment_users(&ScenarioSpec::default(), &[500, 600], &[10]).unwrap()),
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let rec = users_record();
        let files = write_records(&rec, dir.path(), Format::Json).unwrap();
        assert_eq!(read_json(&files[0]).unwrap(), rec);
    }

    #[test]
    fn csv_header_matches_schema() {
        let dir = tempfile::tempdir().unwrap();
        let files = write_records(&users_record(), dir.path(), Format::Csv).unwrap();
        let text = std::fs::read_to_string(&files[0]).unwrap();
        assert_eq!(text.lines().next().unwrap(), USERS_HEADER);
        let rows: Vec<UsersRow> = read_csv(&files[0]).unwrap();
        assert_eq!(rows.len(), 2);
    }

    #[test]
    fn io_errors_carry_the_path() {
        let err = read_json(Path::new("/nonexistent/dir/x.json")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dir/x.json"));
    }
}
