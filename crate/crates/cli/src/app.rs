//! Command-line front end.

use std::ffi::OsString;
use std::io::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::certify::certify_design;
use crate::config::{ExperimentConfig, Overrides};
use crate::error::{CliError, Result};
use crate::plotdata;
use crate::records::{DesignFile, TrialStatus};
use crate::runner::{run_experiment, write_outputs};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;
pub const EXIT_FAILURE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "wcum", version, about = "Robust worst-case utility transmit covariance design")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an experiment and write records, traces, designs and the aggregate table.
    Solve(SolveArgs),
    /// Check a design file and report its worst-case rates.
    Certify(CertifyArgs),
    /// Turn an aggregate table into plot-ready series.
    Plotdata(PlotArgs),
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long, env = "WCUM_CONFIG")]
    pub config: PathBuf,
    #[arg(long, env = "WCUM_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "WCUM_TRIALS")]
    pub trials: Option<usize>,
    #[arg(long, env = "WCUM_OUT")]
    pub out: Option<PathBuf>,
    /// Worker threads (all cores by default).
    #[arg(long, env = "WCUM_JOBS")]
    pub jobs: Option<usize>,
    #[arg(long, env = "WCUM_MC_SAMPLES")]
    pub mc_samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    /// Design file written by `solve`.
    pub design: PathBuf,
    #[arg(long, env = "WCUM_MC_SAMPLES", default_value_t = 10_000)]
    pub mc_samples: usize,
    #[arg(long, env = "WCUM_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Results directory of `solve`.
    pub results: Option<PathBuf>,
    #[arg(long, env = "WCUM_OUT")]
    pub out: Option<PathBuf>,
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let outcome = match cli.command {
        Command::Solve(a) => solve(a),
        Command::Certify(a) => certify(a),
        Command::Plotdata(a) => plot(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CliError::Usage(_) => EXIT_USAGE,
                _ => EXIT_FAILURE,
            }
        }
    }
}

fn solve(a: SolveArgs) -> Result<i32> {
    let mut config = ExperimentConfig::load(&a.config)?;
    config.apply(&Overrides { seed: a.seed, n_trials: a.trials, output_dir: a.out, mc_samples: a.mc_samples })?;
    let experiment = run_experiment(&config, a.jobs)?;
    write_outputs(&experiment, &config.output_dir)?;

    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "{:<6} {:>7} {:>9} {:>6} {:>14} {:>14}", "alg", "radius", "converged", "failed", "mean (conv.)", "mean (all)");
    for r in &experiment.aggregate {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
        let _ = writeln!(
            stdout,
            "{:<6} {:>7} {:>5}/{:<3} {:>6} {:>14} {:>14}",
            r.algorithm.name(),
            r.radius,
            r.converged,
            r.trials,
            r.failed,
            fmt(r.mean_utility_converged),
            fmt(r.mean_utility_all)
        );
    }
    let unsettled = experiment.unsettled_trials();
    eprintln!("wrote {} ({} of {} trials fully converged)", config.output_dir.display(), config.n_trials - unsettled, config.n_trials);
    Ok(if experiment.records().all(|r| r.status != TrialStatus::Converged) {
        EXIT_FAILURE
    } else if unsettled > 0 {
        EXIT_PARTIAL
    } else {
        EXIT_OK
    })
}

fn certify(a: CertifyArgs) -> Result<i32> {
    let text = std::fs::read_to_string(&a.design).map_err(|e| CliError::usage(format!("{}: {e}", a.design.display())))?;
    let design = DesignFile::from_json(&text).map_err(|e| CliError::usage(format!("{}: {e}", a.design.display())))?;
    let report = certify_design(&design, a.mc_samples, a.seed)?;
    print!("{}", report.render());
    Ok(match report.failures() {
        0 => EXIT_OK,
        n if n == report.checks.len() => EXIT_FAILURE,
        _ => EXIT_PARTIAL,
    })
}

fn plot(a: PlotArgs) -> Result<i32> {
    let dir = a.results.or(a.out).ok_or_else(|| CliError::usage("no results directory given"))?;
    let data = plotdata::load(&dir)?;
    plotdata::write(&data, &dir)?;
    print!("{}", data.combined_csv());
    if data.missing.is_empty() {
        return Ok(EXIT_OK);
    }
    for (alg, r) in &data.missing {
        eprintln!("missing: {} at radius {r}", alg.name());
    }
    Ok(EXIT_PARTIAL)
}
