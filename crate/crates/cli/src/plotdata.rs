//! Plot-ready series read from an aggregate table.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::config::{Algorithm, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::records::{parse_aggregate_csv, AggregateRow};
use crate::runner::{AGGREGATE_FILE, CONFIG_FILE};

/// Radius against mean worst-case utility over converged trials.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub algorithm: Algorithm,
    pub points: Vec<(f64, Option<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotData {
    pub series: Vec<Series>,
    /// Expected (algorithm, radius) cells without a value.
    pub missing: Vec<(Algorithm, f64)>,
}

impl PlotData {
    /// Builds one series per algorithm over the expected radii; values are
    /// copied from the table without recomputation.
    pub fn from_rows(rows: &[AggregateRow], algorithms: &[Algorithm], radii: &[f64]) -> Self {
        let mut missing = Vec::new();
        let series = algorithms
            .iter()
            .map(|&algorithm| Series {
                algorithm,
                points: radii
                    .iter()
                    .map(|&r| {
                        let v = rows
                            .iter()
                            .find(|row| row.algorithm == algorithm && row.radius == r)
                            .and_then(|row| row.mean_utility_converged);
                        if v.is_none() {
                            missing.push((algorithm, r));
                        }
                        (r, v)
                    })
                    .collect(),
            })
            .collect();
        Self { series, missing }
    }

    /// Two columns per series: `radius,<algorithm>`.
    pub fn series_csv(&self, s: &Series) -> String {
        let mut out = format!("radius,{}\n", s.algorithm.name());
        for (r, v) in &s.points {
            let _ = writeln!(out, "{r},{}", v.map(|x| x.to_string()).unwrap_or_default());
        }
        out
    }

    /// All series side by side on the shared radius column.
    pub fn combined_csv(&self) -> String {
        let mut out = String::from("radius");
        for s in &self.series {
            out.push(',');
            out.push_str(s.algorithm.name());
        }
        out.push('\n');
        let n = self.series.first().map_or(0, |s| s.points.len());
        for i in 0..n {
            out.push_str(&self.series[0].points[i].0.to_string());
            for s in &self.series {
                out.push(',');
                out.push_str(&s.points[i].1.map(|x| x.to_string()).unwrap_or_default());
            }
            out.push('\n');
        }
        out
    }
}

/// Reads `aggregate.csv` (and `config.toml` when present, for the expected
/// cells) from a results directory.
pub fn load(dir: &Path) -> Result<PlotData> {
    let table = dir.join(AGGREGATE_FILE);
    if !table.is_file() {
        return Err(CliError::usage(format!("no results in {}: {AGGREGATE_FILE} not found", dir.display())));
    }
    let text = fs::read_to_string(&table).map_err(|e| CliError::io(&table, e))?;
    let rows = parse_aggregate_csv(&text)?;
    let config_path = dir.join(CONFIG_FILE);
    let (algorithms, radii) = if config_path.is_file() {
        let c = ExperimentConfig::load(&config_path)?;
        (c.algorithm_list(), c.radii_sweep)
    } else {
        let mut algs: Vec<Algorithm> = rows.iter().map(|r| r.algorithm).collect();
        algs.sort();
        algs.dedup();
        let mut radii: Vec<f64> = rows.iter().map(|r| r.radius).collect();
        radii.sort_by(f64::total_cmp);
        radii.dedup();
        (algs, radii)
    };
    Ok(PlotData::from_rows(&rows, &algorithms, &radii))
}

/// Writes `plot.csv` and one `series-<algorithm>.csv` per algorithm.
pub fn write(data: &PlotData, dir: &Path) -> Result<()> {
    let put = |name: String, contents: String| {
        let path = dir.join(name);
        fs::write(&path, contents).map_err(|e| CliError::io(&path, e))
    };
    put("plot.csv".into(), data.combined_csv())?;
    for s in &data.series {
        put(format!("series-{}.csv", s.algorithm.name()), data.series_csv(s))?;
    }
    Ok(())
}
