//! Trial loop: designs, certificates and worst-case evaluation per radius.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;

use rayon::prelude::*;
use wcum_core::eval::worst_case_report;
use wcum_core::model::{derive_seed, sample_channels};
use wcum_core::wcum::{IterationTrace, StopReason, Wcum};
use wcum_core::{ChannelSet, SystemConfig};

use crate::config::{Algorithm, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::records::{
    aggregate, aggregate_csv, AggregateRow, DesignFile, LimitPoint, TraceLine, TrialRecord, TrialStatus, SCHEMA_VERSION,
};

/// Everything one trial emits.
#[derive(Debug, Clone)]
pub struct TrialOutput {
    pub records: Vec<TrialRecord>,
    pub traces: Vec<TraceLine>,
    /// File name (relative to the designs directory) and contents.
    pub designs: Vec<(String, DesignFile)>,
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub trials: Vec<TrialOutput>,
    pub aggregate: Vec<AggregateRow>,
}

impl Experiment {
    pub fn records(&self) -> impl Iterator<Item = &TrialRecord> {
        self.trials.iter().flat_map(|t| t.records.iter())
    }

    /// Number of trials with at least one cell that did not converge.
    pub fn unsettled_trials(&self) -> usize {
        self.trials.iter().filter(|t| t.records.iter().any(|r| r.status != TrialStatus::Converged)).count()
    }
}

/// Seed of trial `i`; independent of the number of trials.
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    derive_seed(seed, trial as u64)
}

/// Seed of the sampled evaluation at radius index `j`, shared by all
/// algorithms of the trial.
fn mc_seed(trial_seed: u64, j: usize) -> u64 {
    derive_seed(trial_seed, j as u64 + 1)
}

fn status_of(trace: &IterationTrace) -> TrialStatus {
    if trace.converged {
        TrialStatus::Converged
    } else {
        TrialStatus::NotConverged
    }
}

fn trace_lines(trace: &IterationTrace, trial: usize, radius: f64, algorithm: Algorithm) -> Vec<TraceLine> {
    trace
        .records()
        .into_iter()
        .map(|record| TraceLine { schema_version: SCHEMA_VERSION, trial, radius, algorithm, record })
        .collect()
}

fn design_name(trial: usize, j: usize, algorithm: Algorithm) -> String {
    format!("trial{trial:04}-r{j:02}-{}.json", algorithm.name())
}

struct Cell {
    trial: usize,
    seed: u64,
    radius: f64,
    algorithm: Algorithm,
}

impl Cell {
    fn failed(&self, error: String) -> TrialRecord {
        TrialRecord {
            schema_version: SCHEMA_VERSION,
            trial: self.trial,
            trial_seed: self.seed,
            radius: self.radius,
            algorithm: self.algorithm,
            status: TrialStatus::Failed,
            iterations: None,
            stop_reason: None,
            certificate: None,
            report: None,
            error: Some(error),
        }
    }
}

/// Runs one trial at every radius. Errors and panics are recorded in the
/// affected cells and never escape.
pub fn run_trial(config: &ExperimentConfig, system: &SystemConfig, trial: usize) -> TrialOutput {
    let seed = trial_seed(config.seed, trial);
    let solver = Wcum::new(config.wcum_options());
    let estimates = sample_channels(system, seed);
    let mut out = TrialOutput { records: Vec::new(), traces: Vec::new(), designs: Vec::new() };

    let naive = if config.algorithm_list().contains(&Algorithm::Naive) {
        let run = || -> Result<IterationTrace> {
            let channels = ChannelSet::with_radius(estimates.clone(), 0.0)?;
            Ok(solver.run_best_of(&config.starts, &channels, system)?)
        };
        let result = guarded(run);
        if let Ok(trace) = &result {
            out.traces.extend(trace_lines(trace, trial, 0.0, Algorithm::Naive));
        }
        Some(result)
    } else {
        None
    };

    for (j, &radius) in config.radii_sweep.iter().enumerate() {
        for algorithm in config.algorithm_list() {
            let cell = Cell { trial, seed, radius, algorithm };
            let channels = match ChannelSet::with_radius(estimates.clone(), radius) {
                Ok(c) => c,
                Err(e) => {
                    out.records.push(cell.failed(e.to_string()));
                    continue;
                }
            };
            let outcome = match algorithm {
                Algorithm::Wcum => guarded(|| {
                    let trace = solver.run_best_of(&config.starts, &channels, system)?;
                    let certificate = solver.certify_limit(trace.last(), &channels, system)?;
                    Ok((trace, Some(certificate)))
                }),
                Algorithm::Naive => match naive.as_ref().expect("naive run exists") {
                    Ok(trace) => Ok((trace.clone(), None)),
                    Err(e) => Err(CliError::Failed(e.to_string())),
                },
            };
            let (trace, certificate) = match outcome {
                Ok(v) => v,
                Err(e) => {
                    out.records.push(cell.failed(e.to_string()));
                    continue;
                }
            };
            let last = trace.last();
            let report = match guarded(|| Ok(worst_case_report(&last.covs, &channels, system, config.mc_samples, mc_seed(seed, j))?)) {
                Ok(r) => r,
                Err(e) => {
                    out.records.push(cell.failed(e.to_string()));
                    continue;
                }
            };
            if algorithm == Algorithm::Wcum {
                out.traces.extend(trace_lines(&trace, trial, radius, algorithm));
            }
            if config.write_designs {
                let limit = (algorithm == Algorithm::Wcum).then(|| LimitPoint {
                    t: last.t.clone(),
                    lambdas: last.lambdas.clone(),
                    slacks: last.slacks.clone(),
                    psi: last.psi,
                });
                out.designs.push((
                    design_name(trial, j, algorithm),
                    DesignFile {
                        schema_version: SCHEMA_VERSION,
                        algorithm: Some(algorithm),
                        trial: Some(trial),
                        system: system.clone(),
                        channels: channels.clone(),
                        covs: last.covs.clone(),
                        limit,
                    },
                ));
            }
            out.records.push(TrialRecord {
                schema_version: SCHEMA_VERSION,
                trial,
                trial_seed: seed,
                radius,
                algorithm,
                status: status_of(&trace),
                iterations: Some(trace.iterations()),
                stop_reason: Some(trace.stop_reason),
                certificate,
                report: Some(report),
                error: (trace.stop_reason == StopReason::SolverFailure).then(|| trace.failure.clone().unwrap_or_default()),
            });
        }
    }
    out
}

/// Runs `f`, turning a panic into an error.
fn guarded<T>(f: impl FnOnce() -> Result<T>) -> Result<T> {
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            Err(CliError::Failed(format!("panic: {msg}")))
        }
    }
}

/// Runs every trial on a pool of `jobs` workers (all cores when `None`).
/// Outputs are ordered by trial index whatever the completion order.
pub fn run_experiment(config: &ExperimentConfig, jobs: Option<usize>) -> Result<Experiment> {
    config.validate()?;
    let system = config.system_config()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        if n == 0 {
            return Err(CliError::usage("--jobs must be >= 1"));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::usage(format!("cannot start worker pool: {e}")))?;
    let trials: Vec<TrialOutput> =
        pool.install(|| (0..config.n_trials).into_par_iter().map(|i| run_trial(config, &system, i)).collect());
    let records: Vec<TrialRecord> = trials.iter().flat_map(|t| t.records.iter().cloned()).collect();
    let aggregate = aggregate(&records, &config.radii_sweep);
    Ok(Experiment { config: config.clone(), trials, aggregate })
}

pub const CONFIG_FILE: &str = "config.toml";
pub const RESULTS_FILE: &str = "results.jsonl";
pub const TRACES_FILE: &str = "traces.jsonl";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const DESIGNS_DIR: &str = "designs";

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn jsonl<T: serde::Serialize>(items: impl Iterator<Item = T>) -> String {
    items.map(|x| serde_json::to_string(&x).expect("records serialize") + "\n").collect()
}

/// Writes the resolved config, records, traces, aggregate table and designs
/// under `dir`.
pub fn write_outputs(experiment: &Experiment, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    write(&dir.join(CONFIG_FILE), &experiment.config.to_toml())?;
    write(&dir.join(RESULTS_FILE), &jsonl(experiment.records()))?;
    write(&dir.join(TRACES_FILE), &jsonl(experiment.trials.iter().flat_map(|t| t.traces.iter())))?;
    write(&dir.join(AGGREGATE_FILE), &aggregate_csv(&experiment.aggregate))?;
    if experiment.config.write_designs {
        let designs = dir.join(DESIGNS_DIR);
        fs::create_dir_all(&designs).map_err(|e| CliError::io(&designs, e))?;
        for (name, design) in experiment.trials.iter().flat_map(|t| t.designs.iter()) {
            write(&designs.join(name), &serde_json::to_string_pretty(design).expect("designs serialize"))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(radii: &str, algorithms: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml(&format!(
            "radii_sweep = {radii}\nn_trials = 2\nseed = 11\nmc_samples = 200\nalgorithms = {algorithms}\n\
             [system]\nn_tx = 2\nn_users = 2\npower_db = 10.0\nnoise_power = 0.01\n"
        ))
        .unwrap()
    }

    #[test]
    fn trial_seeds_do_not_depend_on_trial_count() {
        let a = config("[0.1]", "[\"wcum\"]");
        let mut b = a.clone();
        b.n_trials = 3;
        let sys = a.system_config().unwrap();
        let first = run_trial(&a, &sys, 1);
        let again = run_trial(&b, &sys, 1);
        assert_eq!(first.records, again.records);
        assert_ne!(trial_seed(11, 0), trial_seed(11, 1));
    }

    #[test]
    fn emits_one_record_per_cell_in_order() {
        let c = config("[0.0, 0.1]", "[\"naive\", \"wcum\"]");
        let e = run_experiment(&c, Some(1)).unwrap();
        let cells: Vec<_> = e.records().map(|r| (r.trial, r.radius, r.algorithm)).collect();
        assert_eq!(
            cells,
            vec![
                (0, 0.0, Algorithm::Wcum),
                (0, 0.0, Algorithm::Naive),
                (0, 0.1, Algorithm::Wcum),
                (0, 0.1, Algorithm::Naive),
                (1, 0.0, Algorithm::Wcum),
                (1, 0.0, Algorithm::Naive),
                (1, 0.1, Algorithm::Wcum),
                (1, 0.1, Algorithm::Naive),
            ]
        );
        assert_eq!(e.aggregate.len(), 4);
        assert!(e.records().all(|r| r.status == TrialStatus::Converged));
        assert!(e.records().filter(|r| r.algorithm == Algorithm::Wcum).all(|r| r.certified() == Some(true)));
        for t in &e.trials {
            assert_eq!(t.designs.len(), 4);
        }
    }

    #[test]
    fn naive_matches_wcum_without_uncertainty() {
        let c = config("[0.0]", "[\"wcum\", \"naive\"]");
        let e = run_experiment(&c, Some(1)).unwrap();
        let u: Vec<f64> = e.aggregate.iter().map(|r| r.mean_utility_all.unwrap()).collect();
        assert!((u[0] - u[1]).abs() < 1e-9, "{u:?}");
    }

    #[test]
    fn guarded_turns_panics_into_errors() {
        let r: Result<()> = guarded(|| panic!("boom"));
        assert!(r.unwrap_err().to_string().contains("boom"));
    }
}
