//! Experiment configuration read from a TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wcum_core::wcum::{Initialization, TargetStep, WcumOptions, DEFAULT_EPSILON, DEFAULT_MAX_ITERS};
use wcum_core::{SystemConfig, UtilityKind};

use crate::error::{CliError, Result};

/// Design algorithms compared by an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// Robust design at the trial's radius.
    Wcum,
    /// Design that treats the estimates as exact, evaluated at the radius.
    Naive,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Wcum => "wcum",
            Algorithm::Naive => "naive",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "wcum" => Some(Algorithm::Wcum),
            "naive" => Some(Algorithm::Naive),
            _ => None,
        }
    }
}

/// Link parameters with the transmit power in dB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub n_tx: usize,
    pub n_users: usize,
    /// Total transmit power in dB, `P = 10^(power_db / 10)`.
    pub power_db: f64,
    /// Receiver noise power, linear scale, shared by all users.
    pub noise_power: f64,
    #[serde(default = "default_utility")]
    pub utility: UtilityKind,
}

fn default_utility() -> UtilityKind {
    UtilityKind::SumRate
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemSection,
    pub radii_sweep: Vec<f64>,
    pub n_trials: usize,
    pub seed: u64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    pub mc_samples: usize,
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<Algorithm>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// Starting points of the alternation; the best converged run is kept.
    #[serde(default = "default_starts")]
    pub starts: Vec<Initialization>,
    #[serde(default)]
    pub target_step: TargetStep,
    /// Write one design file per trial, radius and algorithm.
    #[serde(default = "default_true")]
    pub write_designs: bool,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn default_algorithms() -> Vec<Algorithm> {
    vec![Algorithm::Wcum, Algorithm::Naive]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

fn default_max_iters() -> usize {
    DEFAULT_MAX_ITERS
}

fn default_starts() -> Vec<Initialization> {
    vec![Initialization::Mrt]
}

fn default_true() -> bool {
    true
}

/// Command-line values that replace config entries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub n_trials: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub mc_samples: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| CliError::usage(format!("invalid config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Usage(msg) => CliError::usage(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(n) = o.n_trials {
            self.n_trials = n;
        }
        if let Some(dir) = &o.output_dir {
            self.output_dir = dir.clone();
        }
        if let Some(n) = o.mc_samples {
            self.mc_samples = n;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(CliError::usage(msg));
        if self.radii_sweep.is_empty() {
            return fail("radii_sweep must not be empty".into());
        }
        if let Some(r) = self.radii_sweep.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
            return fail(format!("radii must be finite and >= 0, got {r}"));
        }
        if self.n_trials == 0 {
            return fail("n_trials must be >= 1".into());
        }
        if self.mc_samples == 0 {
            return fail("mc_samples must be >= 1".into());
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return fail(format!("epsilon must be > 0, got {}", self.epsilon));
        }
        if self.max_iters == 0 {
            return fail("max_iters must be >= 1".into());
        }
        if self.algorithms.is_empty() {
            return fail("algorithms must not be empty".into());
        }
        if self.starts.is_empty() {
            return fail("starts must not be empty".into());
        }
        if !self.system.power_db.is_finite() {
            return fail(format!("power_db must be finite, got {}", self.system.power_db));
        }
        self.system_config()?;
        Ok(())
    }

    /// Linear-scale system parameters.
    pub fn system_config(&self) -> Result<SystemConfig> {
        let s = &self.system;
        let power = 10f64.powf(s.power_db / 10.0);
        Ok(SystemConfig::new(s.n_tx, s.n_users, power, vec![s.noise_power; s.n_users], s.utility.clone())?)
    }

    pub fn wcum_options(&self) -> WcumOptions {
        WcumOptions {
            epsilon: self.epsilon,
            max_iters: self.max_iters,
            target_step: self.target_step,
            ..WcumOptions::default()
        }
    }

    /// Algorithms in a fixed order without repeats.
    pub fn algorithm_list(&self) -> Vec<Algorithm> {
        let mut algs = self.algorithms.clone();
        algs.sort();
        algs.dedup();
        algs
    }
}
