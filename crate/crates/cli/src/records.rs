//! Output records: per-trial results, trace lines, design files and the
//! aggregate table.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use wcum_core::eval::WorstCaseReport;
use wcum_core::wcum::{Certificate, StopReason, TraceRecord, WcumState};
use wcum_core::{ChannelSet, CovarianceSet, SystemConfig};

use crate::config::Algorithm;
use crate::error::{CliError, Result};

/// Version of every record layout written by this crate.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrialStatus {
    /// The design run met its stopping rule.
    Converged,
    /// A design exists but the run hit the iteration cap or a solver failure.
    NotConverged,
    /// No design was produced.
    Failed,
}

/// One (trial, radius, algorithm) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub schema_version: u32,
    pub trial: usize,
    pub trial_seed: u64,
    pub radius: f64,
    pub algorithm: Algorithm,
    pub status: TrialStatus,
    pub iterations: Option<usize>,
    pub stop_reason: Option<StopReason>,
    /// Certificate of the robust limit point (robust design only).
    pub certificate: Option<Certificate>,
    pub report: Option<WorstCaseReport>,
    pub error: Option<String>,
}

impl TrialRecord {
    pub fn certified(&self) -> Option<bool> {
        self.certificate.as_ref().map(Certificate::passed)
    }
}

/// One iterate of a design run, tagged with its cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    pub schema_version: u32,
    pub trial: usize,
    /// Radius the run was designed for (0 for the naive design).
    pub radius: f64,
    pub algorithm: Algorithm,
    #[serde(flatten)]
    pub record: TraceRecord,
}

/// Final targets and multipliers of a robust run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitPoint {
    pub t: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub slacks: Vec<f64>,
    pub psi: Option<f64>,
}

/// A design with the context needed to check it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignFile {
    pub schema_version: u32,
    pub algorithm: Option<Algorithm>,
    pub trial: Option<usize>,
    pub system: SystemConfig,
    pub channels: ChannelSet,
    pub covs: CovarianceSet,
    pub limit: Option<LimitPoint>,
}

impl DesignFile {
    pub fn state(&self) -> Option<WcumState> {
        self.limit.as_ref().map(|l| WcumState {
            iteration: 0,
            t: l.t.clone(),
            lambdas: l.lambdas.clone(),
            slacks: l.slacks.clone(),
            covs: self.covs.clone(),
            utility_value: 0.0,
            psi: l.psi,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let design: Self = serde_json::from_str(text).map_err(|e| CliError::usage(format!("malformed design file: {e}")))?;
        if design.schema_version != SCHEMA_VERSION {
            return Err(CliError::usage(format!("unsupported schema_version {}", design.schema_version)));
        }
        design.channels.check_against(&design.system).map_err(|e| CliError::usage(e.to_string()))?;
        if design.covs.n_users() != design.system.n_users
            || design.covs.matrices.iter().any(|q| q.nrows() != design.system.n_tx || q.ncols() != design.system.n_tx)
        {
            return Err(CliError::usage("covariances do not match the system dimensions"));
        }
        Ok(design)
    }
}

/// Mean worst-case utility of one (algorithm, radius) cell over trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub algorithm: Algorithm,
    pub radius: f64,
    pub trials: usize,
    pub converged: usize,
    pub failed: usize,
    /// Exact worst-case utility averaged over converged trials.
    pub mean_utility_converged: Option<f64>,
    /// Exact worst-case utility averaged over every trial with a design.
    pub mean_utility_all: Option<f64>,
    /// Sampled worst-case utility averaged over every trial with a design.
    pub mean_mc_utility_all: Option<f64>,
}

pub const AGGREGATE_HEADER: &str =
    "algorithm,radius,trials,converged,failed,mean_utility_converged,mean_utility_all,mean_mc_utility_all";

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Folds records in trial order into one row per (algorithm, radius),
/// ordered by algorithm then radius.
pub fn aggregate(records: &[TrialRecord], radii: &[f64]) -> Vec<AggregateRow> {
    let mut cells: BTreeMap<(Algorithm, usize), Vec<&TrialRecord>> = BTreeMap::new();
    for rec in records {
        if let Some(j) = radii.iter().position(|r| *r == rec.radius) {
            cells.entry((rec.algorithm, j)).or_default().push(rec);
        }
    }
    cells
        .into_iter()
        .map(|((algorithm, j), mut recs)| {
            recs.sort_by_key(|r| r.trial);
            let exact = |keep: &dyn Fn(&TrialRecord) -> bool| -> Vec<f64> {
                recs.iter().filter(|r| keep(r)).filter_map(|r| r.report.as_ref().map(|p| p.utility_exact)).collect()
            };
            let mc: Vec<f64> = recs.iter().filter_map(|r| r.report.as_ref().map(|p| p.utility_mc)).collect();
            AggregateRow {
                algorithm,
                radius: radii[j],
                trials: recs.len(),
                converged: recs.iter().filter(|r| r.status == TrialStatus::Converged).count(),
                failed: recs.iter().filter(|r| r.status == TrialStatus::Failed).count(),
                mean_utility_converged: mean(&exact(&|r| r.status == TrialStatus::Converged)),
                mean_utility_all: mean(&exact(&|_| true)),
                mean_mc_utility_all: mean(&mc),
            }
        })
        .collect()
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from(AGGREGATE_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.algorithm.name(),
            r.radius,
            r.trials,
            r.converged,
            r.failed,
            cell(r.mean_utility_converged),
            cell(r.mean_utility_all),
            cell(r.mean_mc_utility_all)
        );
    }
    out
}

fn parse_cell(s: &str, line: usize) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| CliError::usage(format!("aggregate line {line}: bad number {s:?}")))
}

pub fn parse_aggregate_csv(text: &str) -> Result<Vec<AggregateRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == AGGREGATE_HEADER => {}
        _ => return Err(CliError::usage("aggregate table has an unexpected header")),
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let n = i + 1;
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 8 {
                return Err(CliError::usage(format!("aggregate line {n}: expected 8 fields")));
            }
            let int = |s: &str| s.parse::<usize>().map_err(|_| CliError::usage(format!("aggregate line {n}: bad count {s:?}")));
            Ok(AggregateRow {
                algorithm: Algorithm::parse(f[0]).ok_or_else(|| CliError::usage(format!("aggregate line {n}: unknown algorithm {:?}", f[0])))?,
                radius: parse_cell(f[1], n)?.ok_or_else(|| CliError::usage(format!("aggregate line {n}: missing radius")))?,
                trials: int(f[2])?,
                converged: int(f[3])?,
                failed: int(f[4])?,
                mean_utility_converged: parse_cell(f[5], n)?,
                mean_utility_all: parse_cell(f[6], n)?,
                mean_mc_utility_all: parse_cell(f[7], n)?,
            })
        })
        .collect()
}

/// Largest absolute difference between two tables with the same cells, or
/// `None` when the cells differ.
pub fn max_table_difference(a: &[AggregateRow], b: &[AggregateRow]) -> Option<f64> {
    if a.len() != b.len() {
        return None;
    }
    let mut worst = 0.0_f64;
    for (x, y) in a.iter().zip(b) {
        if (x.algorithm, x.radius, x.trials, x.converged, x.failed) != (y.algorithm, y.radius, y.trials, y.converged, y.failed) {
            return None;
        }
        for (u, v) in [
            (x.mean_utility_converged, y.mean_utility_converged),
            (x.mean_utility_all, y.mean_utility_all),
            (x.mean_mc_utility_all, y.mean_mc_utility_all),
        ] {
            match (u, v) {
                (None, None) => {}
                (Some(u), Some(v)) if u == v => {}
                (Some(u), Some(v)) => worst = worst.max((u - v).abs()),
                _ => return None,
            }
        }
    }
    Some(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use wcum_core::eval::UserWorstCase;

    fn record(trial: usize, radius: f64, algorithm: Algorithm, status: TrialStatus, u: Option<f64>) -> TrialRecord {
        TrialRecord {
            schema_version: SCHEMA_VERSION,
            trial,
            trial_seed: trial as u64,
            radius,
            algorithm,
            status,
            iterations: None,
            stop_reason: None,
            certificate: None,
            report: u.map(|u| WorstCaseReport {
                per_user: vec![UserWorstCase { exact_worst_sinr: 1.0, exact_worst_rate: 1.0, mc_worst_rate: 1.0, mc_samples: 1 }],
                utility_exact: u,
                utility_mc: u + 1.0,
            }),
            error: None,
        }
    }

    #[test]
    fn aggregate_separates_converged_and_all() {
        use TrialStatus::*;
        let recs = vec![
            record(0, 0.1, Algorithm::Wcum, Converged, Some(2.0)),
            record(1, 0.1, Algorithm::Wcum, NotConverged, Some(5.0)),
            record(2, 0.1, Algorithm::Wcum, Failed, None),
            record(0, 0.0, Algorithm::Naive, Converged, Some(1.0)),
        ];
        let rows = aggregate(&recs, &[0.0, 0.1]);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].algorithm, Algorithm::Wcum);
        assert_eq!((rows[0].trials, rows[0].converged, rows[0].failed), (3, 1, 1));
        assert_eq!(rows[0].mean_utility_converged, Some(2.0));
        assert_eq!(rows[0].mean_utility_all, Some(3.5));
        assert_eq!(rows[0].mean_mc_utility_all, Some(4.5));
        assert_eq!(rows[1].mean_utility_all, Some(1.0));
    }

    #[test]
    fn aggregate_does_not_depend_on_record_order() {
        use TrialStatus::*;
        let mut recs: Vec<_> = (0..5).map(|i| record(i, 0.1, Algorithm::Wcum, Converged, Some(0.1 * i as f64 + 1.0 / 3.0))).collect();
        let a = aggregate(&recs, &[0.1]);
        recs.reverse();
        assert_eq!(aggregate(&recs, &[0.1]), a);
    }

    #[test]
    fn csv_roundtrips_exactly() {
        let rows = vec![AggregateRow {
            algorithm: Algorithm::Naive,
            radius: 0.15,
            trials: 3,
            converged: 2,
            failed: 1,
            mean_utility_converged: Some(1.0 / 3.0),
            mean_utility_all: None,
            mean_mc_utility_all: Some(f64::NEG_INFINITY),
        }];
        let back = parse_aggregate_csv(&aggregate_csv(&rows)).unwrap();
        assert_eq!(back, rows);
        assert_eq!(max_table_difference(&rows, &back), Some(0.0));
    }

    #[test]
    fn table_difference_detects_changes() {
        let mut a = parse_aggregate_csv(&format!("{AGGREGATE_HEADER}\nwcum,0.1,2,2,0,1.5,1.5,1.6\n")).unwrap();
        let b = a.clone();
        a[0].mean_utility_all = Some(1.5 + 1e-9);
        assert!(max_table_difference(&a, &b).unwrap() < 1e-8);
        a[0].converged = 1;
        assert_eq!(max_table_difference(&a, &b), None);
    }

    #[test]
    fn rejects_malformed_tables() {
        assert!(parse_aggregate_csv("nope\n").is_err());
        assert!(parse_aggregate_csv(&format!("{AGGREGATE_HEADER}\nwcum,0.1,2\n")).is_err());
        assert!(parse_aggregate_csv(&format!("{AGGREGATE_HEADER}\nother,0.1,2,2,0,1,1,1\n")).is_err());
    }
}
