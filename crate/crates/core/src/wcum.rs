//! Worst-case utility maximization by alternating between the covariance
//! SDP and per-user bisection on the SINR targets.
//!
//! Starting from a feasible set of targets `t⁽⁰⁾`, each iteration
//!
//! 1. solves the covariance subproblem at `t⁽ᵐ⁻¹⁾`, giving `Q⁽ᵐ⁾`, `λ⁽ᵐ⁾` and
//!    eigenvalue headroom `z⁽ᵐ⁾` with `Ψ⁽ᵐ⁾ = Σ z_k`;
//! 2. raises every `t_k` as far as `Φ_k(t_k, λ_k, Q⁽ᵐ⁾) ⪰ 0` allows, with
//!    `λ_k` either free or held at `λ_k⁽ᵐ⁾` (see [`TargetStep`]).
//!
//! The utility of the targets never decreases, and strictly increases while
//! `Ψ > 0`; at a limit point `Ψ = 0` and the targets are Pareto optimal.

use serde::{Deserialize, Serialize};

use crate::conic::{build_subproblem_q, ClarabelBackend, ConicBackend, SolveStatus, SolverSettings, SolverStats};
use crate::error::{invalid, Error, Result};
use crate::linalg::{min_eigenvalue, psd_projection, CVector};
use crate::lmi::{best_lambda, constraint_margin, max_feasible_t_auto, max_robust_target, Precision, DEFAULT_T_TOL};
use crate::model::{utility_of_sinr, ChannelSet, CovarianceSet, SystemConfig, PSD_TOL, POWER_TOL};

/// Headroom below which `Ψ` and `z_k` count as zero.
pub const ZERO_SLACK: f64 = 1e-5;
/// Slack allowed on `min_eig Φ_k` when checking feasibility of a limit point.
pub const FEASIBILITY_TOL: f64 = 1e-6;
pub const DEFAULT_EPSILON: f64 = 1e-3;
pub const DEFAULT_MAX_ITERS: usize = 200;
/// Largest accepted excess of a solver's `z_k` over the exact headroom of
/// its returned point.
const OVERCLAIM_TOL: f64 = 1e-7;
/// Bisection steps of the pull-back toward the previous iterate.
const PULL_BACK_STEPS: usize = 50;

/// Starting targets for the alternation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Initialization {
    /// Worst-case SINR lower bound of equal-power MRT beamforming.
    #[default]
    Mrt,
    /// All targets zero.
    Zero,
}

/// How the target step treats the multipliers of the covariance step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TargetStep {
    /// Bisect on `t_k` with `λ_k` free: `t_k` becomes the exact worst-case
    /// SINR of `Q⁽ᵐ⁾`, never below the fixed-multiplier value.
    #[default]
    FreeMultiplier,
    /// Bisect on `t_k` with `λ_k⁽ᵐ⁾` held at the covariance-step value.
    FixedMultiplier,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WcumOptions {
    pub epsilon: f64,
    pub max_iters: usize,
    /// Absolute bisection tolerance on each `t_k`.
    pub t_tol: f64,
    pub zero_slack: f64,
    pub init: Initialization,
    pub target_step: TargetStep,
    pub solver: SolverSettings,
}

impl Default for WcumOptions {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            max_iters: DEFAULT_MAX_ITERS,
            t_tol: DEFAULT_T_TOL,
            zero_slack: ZERO_SLACK,
            init: Initialization::Mrt,
            target_step: TargetStep::FreeMultiplier,
            solver: SolverSettings::default(),
        }
    }
}

/// One iterate of the alternation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WcumState {
    pub iteration: usize,
    /// SINR targets `t_k⁽ᵐ⁾`.
    pub t: Vec<f64>,
    pub lambdas: Vec<f64>,
    /// Headroom `z_k⁽ᵐ⁾` from the covariance step (zero for the initial state).
    pub slacks: Vec<f64>,
    pub covs: CovarianceSet,
    /// `U(log2(1 + t_1), …)`; `-∞` when the utility is undefined (a
    /// proportional-fair user at zero rate), serialized as `null`.
    #[serde(with = "finite_or_null")]
    pub utility_value: f64,
    /// `Ψ⁽ᵐ⁾`; absent for the initial state.
    pub psi: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    EpsilonCriterion,
    IterationCap,
    SolverFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub states: Vec<WcumState>,
    pub converged: bool,
    pub stop_reason: StopReason,
    /// Diagnostics when `stop_reason` is a solver failure.
    pub failure: Option<String>,
}

impl IterationTrace {
    pub fn last(&self) -> &WcumState {
        self.states.last().expect("a trace always holds the initial state")
    }

    pub fn iterations(&self) -> usize {
        self.last().iteration
    }

    /// One line-delimited JSON record per iterate.
    pub fn records(&self) -> Vec<TraceRecord> {
        self.states.iter().map(TraceRecord::from).collect()
    }

    pub fn to_jsonl(&self) -> String {
        self.records()
            .iter()
            .map(|r| serde_json::to_string(r).expect("trace records serialize") + "\n")
            .collect()
    }
}

/// Compact per-iteration audit record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub m: usize,
    pub t: Vec<f64>,
    pub lambda: Vec<f64>,
    pub z: Vec<f64>,
    pub psi: Option<f64>,
    #[serde(with = "finite_or_null")]
    pub utility: f64,
}

impl From<&WcumState> for TraceRecord {
    fn from(s: &WcumState) -> Self {
        Self {
            m: s.iteration,
            t: s.t.clone(),
            lambda: s.lambdas.clone(),
            z: s.slacks.clone(),
            psi: s.psi,
            utility: s.utility_value,
        }
    }
}

/// Result of the covariance step.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceStep {
    pub covs: CovarianceSet,
    pub lambdas: Vec<f64>,
    pub slacks: Vec<f64>,
    pub psi: f64,
    pub status: SolveStatus,
    pub stats: SolverStats,
}

/// Equal-power maximum-ratio beamformers `√(P/K) ĥ_k/‖ĥ_k‖`.
pub fn mrt_beamformers(channels: &ChannelSet, config: &SystemConfig) -> Result<Vec<CVector>> {
    channels.check_against(config)?;
    let amplitude = (config.power_budget / config.n_users as f64).sqrt();
    channels
        .estimates
        .iter()
        .enumerate()
        .map(|(k, h)| {
            let norm = h.norm();
            if norm == 0.0 {
                return invalid(format!("channel estimate of user {k} is zero"));
            }
            Ok(h.unscale(norm).scale(amplitude))
        })
        .collect()
}

/// Worst-case SINR lower bound of rank-one beamformers `w_k`, obtained by
/// minimizing the signal and maximizing the interference separately over
/// the error ball:
///
/// ```text
/// t_k = ([|ĥ_kᴴw_k| − r_k‖w_k‖]⁺)² / (Σ_{ℓ≠k} (|ĥ_kᴴw_ℓ| + r_k‖w_ℓ‖)² + σ_k²)
/// ```
pub fn beamformer_lower_bound(beams: &[CVector], channels: &ChannelSet, config: &SystemConfig) -> Result<Vec<f64>> {
    channels.check_against(config)?;
    if beams.len() != config.n_users || beams.iter().any(|w| w.len() != config.n_tx) {
        return invalid("beamformer shapes do not match the system");
    }
    Ok((0..config.n_users)
        .map(|k| {
            let h = &channels.estimates[k];
            let r = channels.radii[k];
            let signal = ((h.dotc(&beams[k])).norm() - r * beams[k].norm()).max(0.0);
            let interference: f64 = (0..config.n_users)
                .filter(|l| *l != k)
                .map(|l| (h.dotc(&beams[l]).norm() + r * beams[l].norm()).powi(2))
                .sum();
            signal * signal / (interference + config.noise_powers[k])
        })
        .collect())
}

/// Feasible starting targets from equal-power MRT:
///
/// ```text
/// t_k⁽⁰⁾ = (P/K)([‖ĥ_k‖ − r_k]⁺)² / (Σ_{ℓ≠k} (P/K)(|ĥ_kᴴĥ_ℓ|/‖ĥ_ℓ‖ + r_k)² + σ_k²)
/// ```
pub fn init_t(channels: &ChannelSet, config: &SystemConfig) -> Result<Vec<f64>> {
    channels.check_against(config)?;
    if let Some(k) = channels.estimates.iter().position(|h| h.norm() == 0.0) {
        return invalid(format!("channel estimate of user {k} is zero"));
    }
    let share = config.power_budget / config.n_users as f64;
    Ok((0..config.n_users)
        .map(|k| {
            let h = &channels.estimates[k];
            let r = channels.radii[k];
            let gap = (h.norm() - r).max(0.0);
            let interference: f64 = (0..config.n_users)
                .filter(|l| *l != k)
                .map(|l| {
                    let hl = &channels.estimates[l];
                    share * (h.dotc(hl).norm() / hl.norm() + r).powi(2)
                })
                .sum();
            share * gap * gap / (interference + config.noise_powers[k])
        })
        .collect())
}

fn tracked_utility(t: &[f64], config: &SystemConfig) -> Result<f64> {
    match utility_of_sinr(t, &config.utility) {
        Ok(u) => Ok(u),
        Err(Error::Domain(_)) => Ok(f64::NEG_INFINITY),
        Err(e) => Err(e),
    }
}

/// Outcome of one certificate check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub passed: bool,
    /// Signed distance to the threshold; negative when violated.
    #[serde(with = "finite_or_null")]
    pub margin: f64,
    pub detail: String,
}

/// Post-convergence checks of a limit point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub feasibility: Check,
    pub zero_slack: Check,
    pub pareto_probe: Check,
    /// `Ψ` from re-solving the covariance subproblem at the final targets.
    pub probe_psi: Option<f64>,
}

impl Certificate {
    pub fn passed(&self) -> bool {
        self.feasibility.passed && self.zero_slack.passed && self.pareto_probe.passed
    }
}

/// The alternating solver, generic over the SDP backend.
#[derive(Debug, Clone)]
pub struct Wcum<B: ConicBackend = ClarabelBackend> {
    pub backend: B,
    pub options: WcumOptions,
}

impl Wcum<ClarabelBackend> {
    pub fn new(options: WcumOptions) -> Self {
        Self { backend: ClarabelBackend::new(options.solver), options }
    }
}

impl Default for Wcum<ClarabelBackend> {
    fn default() -> Self {
        Self::new(WcumOptions::default())
    }
}

impl<B: ConicBackend> Wcum<B> {
    pub fn with_backend(backend: B, options: WcumOptions) -> Self {
        Self { backend, options }
    }

    /// Iterate zero: starting targets with the MRT covariances.
    pub fn initial_state(&self, channels: &ChannelSet, config: &SystemConfig) -> Result<WcumState> {
        let beams = mrt_beamformers(channels, config)?;
        let t = match self.options.init {
            Initialization::Mrt => init_t(channels, config)?,
            Initialization::Zero => vec![0.0; config.n_users],
        };
        let covs = CovarianceSet::from_beamformers(&beams);
        let lambdas = (0..config.n_users)
            .map(|k| best_lambda(t[k], &covs, channels, config, k, f64::INFINITY).map(|o| o.lambda))
            .collect::<Result<Vec<f64>>>()?;
        Ok(WcumState {
            iteration: 0,
            utility_value: tracked_utility(&t, config)?,
            t,
            lambdas,
            slacks: vec![0.0; config.n_users],
            covs,
            psi: None,
        })
    }

    /// Solve the covariance subproblem at `targets`.
    ///
    /// Each backend attempt is scored by how far its headroom `z_k` exceeds
    /// the exact headroom of the returned point; the first attempt within
    /// `OVERCLAIM_TOL` is taken, otherwise the least overclaiming one. The
    /// reported `z_k` is the larger of the two values, and `λ_k` maximizes
    /// the exact headroom.
    pub fn solve_covariances(&self, targets: &[f64], channels: &ChannelSet, config: &SystemConfig) -> Result<CovarianceStep> {
        let (problem, vars) = build_subproblem_q(targets, channels, config)?;
        let mut best: Option<(f64, CovarianceStep)> = None;
        let mut failure = None;
        for attempt in 0..self.backend.attempts() {
            let sol = match self.backend.solve_attempt(&problem, attempt) {
                Ok(sol) => sol,
                Err(Error::Solver(msg)) => {
                    failure = Some(msg);
                    continue;
                }
                Err(e) => return Err(e),
            };
            if !sol.status.is_usable() {
                failure = Some(format!(
                    "{} returned {:?} after {} iterations (primal residual {:.2e}, dual residual {:.2e}, gap {:.2e}, violation {:.2e})",
                    self.backend.name(),
                    sol.status,
                    sol.stats.iterations,
                    sol.stats.primal_residual,
                    sol.stats.dual_residual,
                    sol.stats.duality_gap,
                    sol.stats.primal_violation
                ));
                continue;
            }
            // Round-off within the PSD and power tolerances is kept: interferers
            // enter Φ_k scaled by t_k, so clipping it would cost far more headroom.
            let mut covs = vars.covariances(&problem, &sol);
            for q in &mut covs.matrices {
                if min_eigenvalue(q) < -PSD_TOL {
                    *q = psd_projection(q);
                }
            }
            let power = covs.total_power();
            if power > config.power_budget + POWER_TOL {
                covs = covs.scaled(config.power_budget / power);
            }
            let mut slacks = vars.slacks(&problem, &sol);
            let mut lambdas = Vec::with_capacity(slacks.len());
            let mut overclaim = 0.0_f64;
            for (k, z) in slacks.iter_mut().enumerate() {
                let exact = best_lambda(targets[k], &covs, channels, config, k, f64::INFINITY)?;
                overclaim = overclaim.max(*z - exact.min_eig);
                *z = z.max(exact.min_eig);
                lambdas.push(exact.lambda);
            }
            let psi = slacks.iter().sum();
            let step = CovarianceStep { covs, lambdas, slacks, psi, status: sol.status, stats: sol.stats };
            if overclaim <= OVERCLAIM_TOL {
                return Ok(step);
            }
            if best.as_ref().is_none_or(|(o, _)| overclaim < *o) {
                best = Some((overclaim, step));
            }
        }
        match best {
            Some((_, step)) => Ok(step),
            None => Err(Error::Solver(failure.unwrap_or_else(|| "no solver attempt".into()))),
        }
    }

    /// Covariance step at the targets of `state`.
    pub fn step_q(&self, state: &WcumState, channels: &ChannelSet, config: &SystemConfig) -> Result<CovarianceStep> {
        self.solve_covariances(&state.t, channels, config)
    }

    /// Target step: per-user bisection at the state's covariances, starting
    /// from the state's targets and multipliers. Returns the new targets,
    /// the multipliers certifying them and their utility.
    pub fn step_t(&self, state: &WcumState, channels: &ChannelSet, config: &SystemConfig) -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let mut t = Vec::with_capacity(config.n_users);
        let mut lambdas = Vec::with_capacity(config.n_users);
        for k in 0..config.n_users {
            let (tk, lk) = match self.options.target_step {
                TargetStep::FreeMultiplier => {
                    let found = max_robust_target(&state.covs, channels, config, k, Precision::absolute(self.options.t_tol))?;
                    (found.t, found.lambda)
                }
                TargetStep::FixedMultiplier => {
                    let found = max_feasible_t_auto(state.lambdas[k], &state.covs, channels, config, k, self.options.t_tol)
                        .map_err(|e| match e {
                            Error::BracketTooNarrow { t_hi, min_eig } => Error::Solver(format!(
                                "target bisection for user {k} could not bracket the boundary (t_hi {t_hi:.3e}, min eigenvalue {min_eig:.3e})"
                            )),
                            other => other,
                        })?;
                    (found.t, state.lambdas[k])
                }
            };
            t.push(tk);
            lambdas.push(lk);
        }
        let u = tracked_utility(&t, config)?;
        Ok((t, lambdas, u))
    }

    /// Pulls an inexact covariance step back toward the previous iterate.
    ///
    /// `Φ_k` is affine in `(Q, λ)`, so along `(1 − α)·new + α·prev` the set of
    /// `α` certifying `t_k⁽ᵐ⁻¹⁾` is an interval containing `α = 1`. Bisection
    /// finds the smallest `α` certifying every previous target; the returned
    /// multipliers certify them at the mixed covariances.
    fn pull_back(
        &self,
        prev: &WcumState,
        covs: &CovarianceSet,
        channels: &ChannelSet,
        config: &SystemConfig,
    ) -> Result<(CovarianceSet, Vec<f64>, f64)> {
        let k_users = config.n_users;
        let new_lambdas = (0..k_users)
            .map(|k| best_lambda(prev.t[k], covs, channels, config, k, f64::INFINITY).map(|o| o.lambda))
            .collect::<Result<Vec<f64>>>()?;
        let mix = |alpha: f64| -> (CovarianceSet, Vec<f64>) {
            let matrices = covs
                .matrices
                .iter()
                .zip(&prev.covs.matrices)
                .map(|(a, b)| a.scale(1.0 - alpha) + b.scale(alpha))
                .collect();
            let lambdas = new_lambdas.iter().zip(&prev.lambdas).map(|(a, b)| (1.0 - alpha) * a + alpha * b).collect();
            (CovarianceSet::new(matrices), lambdas)
        };
        let certified = |alpha: f64| -> Result<bool> {
            let (c, l) = mix(alpha);
            for k in 0..k_users {
                if constraint_margin(prev.t[k], l[k], &c, channels, config, k)? < 0.0 {
                    return Ok(false);
                }
            }
            Ok(true)
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..PULL_BACK_STEPS {
            let mid = 0.5 * (lo + hi);
            if certified(mid)? {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let (c, l) = mix(hi);
        Ok((c, l, hi))
    }

    /// Alternate until the utility changes by at most `epsilon` and the next
    /// covariance step at the resulting targets has `Ψ` at most
    /// `zero_slack`, or the iteration cap is hit. The final state keeps the
    /// last exactly feasible point together with that probe's `Ψ`.
    pub fn run(&self, channels: &ChannelSet, config: &SystemConfig) -> Result<IterationTrace> {
        config.validate()?;
        channels.check_against(config)?;
        let opts = &self.options;
        if !(opts.epsilon.is_finite() && opts.epsilon > 0.0) {
            return invalid(format!("epsilon must be > 0, got {}", opts.epsilon));
        }
        if opts.max_iters == 0 {
            return invalid("max_iters must be >= 1");
        }
        let mut states = vec![self.initial_state(channels, config)?];
        // Set once the utility test holds; the run then stops at the next
        // covariance step that finds no headroom at the current targets.
        let mut settled = true;
        for m in 1..=opts.max_iters {
            let prev = states.last().expect("nonempty");
            let step = match self.step_q(prev, channels, config) {
                Ok(step) => step,
                Err(Error::Solver(msg)) => {
                    return Ok(IterationTrace {
                        states,
                        converged: false,
                        stop_reason: StopReason::SolverFailure,
                        failure: Some(format!("iteration {m}: {msg}")),
                    })
                }
                Err(e) => return Err(e),
            };
            let mut next = WcumState {
                iteration: m,
                t: prev.t.clone(),
                lambdas: step.lambdas,
                slacks: step.slacks,
                covs: step.covs,
                utility_value: prev.utility_value,
                psi: Some(step.psi),
            };
            if settled && step.psi <= opts.zero_slack {
                // No headroom left at the current targets. The limit point
                // keeps the previous covariances, which certify the targets
                // exactly; its slacks are their exact headroom.
                let mut last = prev.clone();
                last.iteration = m;
                last.psi = Some(step.psi);
                last.slacks = (0..config.n_users)
                    .map(|k| constraint_margin(last.t[k], last.lambdas[k], &last.covs, channels, config, k))
                    .collect::<Result<Vec<f64>>>()?;
                states.push(last);
                return Ok(IterationTrace { states, converged: true, stop_reason: StopReason::EpsilonCriterion, failure: None });
            }
            let (t, lambdas, u) = match self.step_t(&next, channels, config) {
                Ok(v) => v,
                Err(Error::Solver(msg)) => {
                    states.push(next);
                    return Ok(IterationTrace {
                        states,
                        converged: false,
                        stop_reason: StopReason::SolverFailure,
                        failure: Some(format!("iteration {m}: {msg}")),
                    });
                }
                Err(e) => return Err(e),
            };
            let (t, lambdas, u) = if u < prev.utility_value {
                let (covs, held, _) = self.pull_back(prev, &next.covs, channels, config)?;
                next.covs = covs;
                next.lambdas = held.clone();
                let (mut t, mut lambdas, _) = self.step_t(&next, channels, config)?;
                for k in 0..config.n_users {
                    if t[k] < prev.t[k] {
                        t[k] = prev.t[k];
                        lambdas[k] = held[k];
                    }
                }
                let u = tracked_utility(&t, config)?;
                (t, lambdas, u)
            } else {
                (t, lambdas, u)
            };
            let prev_u = prev.utility_value;
            next.t = t;
            next.lambdas = lambdas;
            next.utility_value = u;
            states.push(next);
            settled = u == prev_u || (u - prev_u).abs() <= opts.epsilon;
        }
        Ok(IterationTrace { states, converged: false, stop_reason: StopReason::IterationCap, failure: None })
    }

    /// Feasibility, zero-slack and local Pareto checks of a limit point.
    pub fn certify_limit(&self, last: &WcumState, channels: &ChannelSet, config: &SystemConfig) -> Result<Certificate> {
        channels.check_against(config)?;
        let k_users = config.n_users;
        if last.t.len() != k_users || last.lambdas.len() != k_users || last.covs.n_users() != k_users {
            return invalid("state does not match the number of users");
        }

        let mut worst = f64::INFINITY;
        let mut notes = Vec::new();
        for k in 0..k_users {
            let lambda_margin = last.lambdas[k];
            worst = worst.min(lambda_margin);
            if lambda_margin < 0.0 {
                notes.push(format!("lambda_{k} = {lambda_margin:.3e} < 0"));
            }
            let m = constraint_margin(last.t[k], last.lambdas[k].max(0.0), &last.covs, channels, config, k)? + FEASIBILITY_TOL;
            worst = worst.min(m);
            if m < 0.0 {
                notes.push(format!("min eig Phi_{k} = {:.3e}", m - FEASIBILITY_TOL));
            }
            let q = &last.covs.matrices[k];
            let qm = min_eigenvalue(q) + PSD_TOL;
            worst = worst.min(qm);
            if qm < 0.0 {
                notes.push(format!("min eig Q_{k} = {:.3e}", qm - PSD_TOL));
            }
        }
        let power = config.power_budget + POWER_TOL - last.covs.total_power();
        worst = worst.min(power);
        if power < 0.0 {
            notes.push(format!("total power {:.9} exceeds {:.9}", last.covs.total_power(), config.power_budget));
        }
        let feasibility = Check {
            passed: worst >= 0.0,
            margin: worst,
            detail: if notes.is_empty() { "feasible".into() } else { notes.join("; ") },
        };

        let max_z = last.slacks.iter().fold(0.0_f64, |a, z| a.max(z.abs()));
        let zero_slack = Check {
            passed: max_z <= self.options.zero_slack,
            margin: self.options.zero_slack - max_z,
            detail: format!("max |z_k| = {max_z:.3e}"),
        };

        let (pareto_probe, probe_psi) = match self.solve_covariances(&last.t, channels, config) {
            Ok(step) => (
                Check {
                    passed: step.psi <= self.options.zero_slack,
                    margin: self.options.zero_slack - step.psi,
                    detail: format!("re-solved psi = {:.3e}", step.psi),
                },
                Some(step.psi),
            ),
            Err(Error::Solver(msg)) => (Check { passed: false, margin: f64::NEG_INFINITY, detail: msg }, None),
            Err(e) => return Err(e),
        };
        Ok(Certificate { feasibility, zero_slack, pareto_probe, probe_psi })
    }
}

impl<B: ConicBackend + Clone> Wcum<B> {
    /// Runs from each starting point in `starts` and keeps one trace:
    /// converged traces first, then the highest final utility, then the
    /// earliest start. Different starts can reach different Pareto points.
    pub fn run_best_of(&self, starts: &[Initialization], channels: &ChannelSet, config: &SystemConfig) -> Result<IterationTrace> {
        if starts.is_empty() {
            return invalid("at least one starting point is required");
        }
        let mut best: Option<IterationTrace> = None;
        for &init in starts {
            let solver = Wcum { backend: self.backend.clone(), options: WcumOptions { init, ..self.options } };
            let trace = solver.run(channels, config)?;
            let wins = match &best {
                None => true,
                Some(b) => (trace.converged, trace.last().utility_value) > (b.converged, b.last().utility_value),
            };
            if wins {
                best = Some(trace);
            }
        }
        Ok(best.expect("starts is nonempty"))
    }
}

/// Serializes non-finite floats as `null` and reads `null` back as `-∞`.
pub mod finite_or_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::C64;
    use crate::model::{sample_channels, sample_error, ErrorMode, derive_seed};

    fn cv(values: &[f64]) -> CVector {
        CVector::from_iterator(values.len(), values.iter().map(|v| C64::new(*v, 0.0)))
    }

    fn random_instance(n: usize, k: usize, r: f64, seed: u64) -> (SystemConfig, ChannelSet) {
        let config = SystemConfig::sum_rate(n, k, 10.0, 0.01).unwrap();
        let channels = ChannelSet::with_radius(sample_channels(&config, seed), r).unwrap();
        (config, channels)
    }

    #[test]
    fn init_orthogonal_symmetric_case() {
        let config = SystemConfig::sum_rate(2, 2, 10.0, 0.01).unwrap();
        let channels = ChannelSet::with_radius(vec![cv(&[1.0, 0.0]), cv(&[0.0, 1.0])], 0.1).unwrap();
        let t = init_t(&channels, &config).unwrap();
        assert!((t[0] - 67.5).abs() < 1e-10);
        assert!((t[1] - 67.5).abs() < 1e-10);
    }

    #[test]
    fn init_clamps_large_radius() {
        let config = SystemConfig::sum_rate(2, 2, 10.0, 0.01).unwrap();
        let channels = ChannelSet::new(vec![cv(&[0.5, 0.0]), cv(&[0.0, 1.0])], vec![0.6, 0.1]).unwrap();
        let t = init_t(&channels, &config).unwrap();
        assert_eq!(t[0], 0.0);
        assert!(t[1] > 0.0);
    }

    #[test]
    fn init_rejects_zero_channel() {
        let config = SystemConfig::sum_rate(2, 2, 10.0, 0.01).unwrap();
        let channels = ChannelSet::with_radius(vec![cv(&[0.0, 0.0]), cv(&[0.0, 1.0])], 0.1).unwrap();
        assert!(matches!(init_t(&channels, &config), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn init_equals_general_bound_with_mrt() {
        for seed in 0..20 {
            let (config, channels) = random_instance(4, 3, 0.2, seed);
            let closed = init_t(&channels, &config).unwrap();
            let beams = mrt_beamformers(&channels, &config).unwrap();
            let general = beamformer_lower_bound(&beams, &channels, &config).unwrap();
            for (a, b) in closed.iter().zip(&general) {
                assert!((a - b).abs() <= 1e-12 * a.max(1.0));
            }
        }
    }

    #[test]
    fn init_matches_sampled_ball_extremes() {
        // Extremize numerator and denominator separately over boundary
        // samples; the closed form must sit at or below the sampled ratio
        // and within 1 %.
        let (config, channels) = random_instance(3, 2, 0.1, 77);
        let beams = mrt_beamformers(&channels, &config).unwrap();
        let closed = init_t(&channels, &config).unwrap();
        for k in 0..2 {
            let h = &channels.estimates[k];
            let mut min_signal = f64::INFINITY;
            let mut max_interf = 0.0_f64;
            for i in 0..100_000 {
                let e = sample_error(0.1, 3, derive_seed(5, i), ErrorMode::Boundary).unwrap();
                let ht = h + e;
                min_signal = min_signal.min(ht.dotc(&beams[k]).norm_sqr());
                max_interf = max_interf.max(ht.dotc(&beams[1 - k]).norm_sqr());
            }
            let sampled = min_signal / (max_interf + 0.01);
            assert!(closed[k] <= sampled * (1.0 + 1e-12));
            assert!((sampled - closed[k]) / closed[k] <= 0.01, "{} vs {}", closed[k], sampled);
        }
    }

    #[test]
    fn single_user_perfect_csi_reaches_capacity() {
        let config = SystemConfig::sum_rate(2, 1, 10.0, 0.01).unwrap();
        let channels = ChannelSet::with_radius(sample_channels(&config, 4), 0.0).unwrap();
        let trace = Wcum::default().run(&channels, &config).unwrap();
        assert_eq!(trace.stop_reason, StopReason::EpsilonCriterion);
        let h2 = channels.estimates[0].norm_squared();
        let capacity = (1.0 + 10.0 * h2 / 0.01).log2();
        assert!((trace.last().utility_value - capacity).abs() <= 1e-3, "{} vs {capacity}", trace.last().utility_value);
    }

    #[test]
    fn first_covariance_step_has_headroom_and_full_power() {
        let (config, channels) = random_instance(2, 1, 0.0, 9);
        let solver = Wcum::default();
        let state = WcumState { t: vec![0.0], ..solver.initial_state(&channels, &config).unwrap() };
        let step = solver.step_q(&state, &channels, &config).unwrap();
        assert!((step.covs.total_power() - 10.0).abs() < 1e-6);

        let (config, channels) = random_instance(4, 2, 0.1, 10);
        let state = solver.initial_state(&channels, &config).unwrap();
        let step = solver.step_q(&state, &channels, &config).unwrap();
        assert!(step.psi > 0.0);
    }

    #[test]
    fn trace_is_monotone_and_certified() {
        for seed in 0..4 {
            let (config, channels) = random_instance(4, 2, 0.1, 100 + seed);
            let solver = Wcum::default();
            let trace = solver.run(&channels, &config).unwrap();
            assert!(trace.converged, "seed {seed}: {:?}", trace.stop_reason);
            for w in trace.states.windows(2) {
                assert!(w[1].utility_value >= w[0].utility_value - 1e-6);
                for k in 0..2 {
                    assert!(w[1].t[k] >= w[0].t[k] - 1e-6, "seed {seed} m {} k {k}: {} -> {} z {:?}", w[1].iteration, w[0].t[k], w[1].t[k], w[1].slacks);
                }
            }
            let cert = solver.certify_limit(trace.last(), &channels, &config).unwrap();
            assert!(cert.passed(), "seed {seed}: {cert:?}");
        }
    }

    #[test]
    fn perturbed_target_fails_feasibility() {
        let (config, channels) = random_instance(4, 2, 0.1, 3);
        let solver = Wcum::default();
        let trace = solver.run(&channels, &config).unwrap();
        let mut last = trace.last().clone();
        last.t[0] += 0.1;
        let cert = solver.certify_limit(&last, &channels, &config).unwrap();
        assert!(!cert.feasibility.passed);
    }

    #[test]
    fn truncated_run_fails_pareto_probe() {
        let (config, channels) = random_instance(4, 2, 0.1, 3);
        let solver = Wcum::new(WcumOptions { max_iters: 1, ..WcumOptions::default() });
        let trace = solver.run(&channels, &config).unwrap();
        assert!(trace.last().psi.unwrap() > ZERO_SLACK);
        let cert = solver.certify_limit(trace.last(), &channels, &config).unwrap();
        assert!(!cert.pareto_probe.passed);
    }

    #[test]
    fn trace_serializes_one_record_per_iterate() {
        let (config, channels) = random_instance(2, 2, 0.1, 8);
        let trace = Wcum::default().run(&channels, &config).unwrap();
        let text = trace.to_jsonl();
        assert_eq!(text.lines().count(), trace.states.len());
        let first: TraceRecord = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first.m, 0);
        assert!(first.psi.is_none());
        let back: IterationTrace = serde_json::from_str(&serde_json::to_string(&trace).unwrap()).unwrap();
        assert_eq!(back, trace);
    }

    #[test]
    fn rejects_bad_options() {
        let (config, channels) = random_instance(2, 2, 0.1, 8);
        let solver = Wcum::new(WcumOptions { epsilon: 0.0, ..WcumOptions::default() });
        assert!(solver.run(&channels, &config).is_err());
        let solver = Wcum::new(WcumOptions { max_iters: 0, ..WcumOptions::default() });
        assert!(solver.run(&channels, &config).is_err());
    }

    #[test]
    fn free_target_step_dominates_fixed() {
        let (config, channels) = random_instance(4, 2, 0.1, 21);
        let free = Wcum::default();
        let fixed = Wcum::new(WcumOptions { target_step: TargetStep::FixedMultiplier, ..WcumOptions::default() });
        let init = free.initial_state(&channels, &config).unwrap();
        let step = free.step_q(&init, &channels, &config).unwrap();
        let state = WcumState { covs: step.covs, lambdas: step.lambdas, ..init };
        let (t_free, l_free, _) = free.step_t(&state, &channels, &config).unwrap();
        let (t_fixed, l_fixed, _) = fixed.step_t(&state, &channels, &config).unwrap();
        for k in 0..2 {
            assert!(t_free[k] >= t_fixed[k] - 1e-6, "user {k}: {} < {}", t_free[k], t_fixed[k]);
            assert!(constraint_margin(t_free[k], l_free[k], &state.covs, &channels, &config, k).unwrap() >= 0.0);
            assert!(constraint_margin(t_fixed[k], l_fixed[k], &state.covs, &channels, &config, k).unwrap() >= 0.0);
        }
    }

    #[test]
    fn fixed_multiplier_run_is_monotone_and_feasible() {
        let (config, channels) = random_instance(2, 2, 0.1, 22);
        let options = WcumOptions { target_step: TargetStep::FixedMultiplier, max_iters: 20, ..WcumOptions::default() };
        let trace = Wcum::new(options).run(&channels, &config).unwrap();
        for w in trace.states.windows(2) {
            assert!(w[1].utility_value >= w[0].utility_value - 1e-6);
        }
        let last = trace.last();
        for k in 0..2 {
            assert!(constraint_margin(last.t[k], last.lambdas[k], &last.covs, &channels, &config, k).unwrap() >= -FEASIBILITY_TOL);
        }
    }

    #[test]
    fn target_step_decouples_across_users() {
        // The constraint of user k involves t_k only, so the jointly feasible
        // targets form a box: a 2-D grid scan must find the same corner as
        // the per-user bisections.
        let (config, channels) = random_instance(2, 2, 0.1, 23);
        let solver = Wcum::default();
        let init = solver.initial_state(&channels, &config).unwrap();
        let step = solver.step_q(&init, &channels, &config).unwrap();
        let state = WcumState { covs: step.covs, lambdas: step.lambdas, ..init };
        let (t, _, _) = solver.step_t(&state, &channels, &config).unwrap();
        let feasible = |k: usize, tk: f64| best_lambda(tk, &state.covs, &channels, &config, k, 0.0).unwrap().min_eig >= 0.0;
        let n = 200;
        let tops = [1.2 * t[0], 1.2 * t[1]];
        let (mut best0, mut best1) = (0.0_f64, 0.0_f64);
        for i in 0..=n {
            let t0 = tops[0] * i as f64 / n as f64;
            for j in 0..=n {
                let t1 = tops[1] * j as f64 / n as f64;
                if feasible(0, t0) && feasible(1, t1) {
                    best0 = best0.max(t0);
                    best1 = best1.max(t1);
                }
            }
        }
        assert!((best0 - t[0]).abs() <= tops[0] / n as f64 + 1e-6, "{best0} vs {}", t[0]);
        assert!((best1 - t[1]).abs() <= tops[1] / n as f64 + 1e-6, "{best1} vs {}", t[1]);
    }

    #[test]
    fn zero_headroom_leaves_targets_unchanged() {
        let (config, channels) = random_instance(4, 2, 0.1, 24);
        let solver = Wcum::default();
        let trace = solver.run(&channels, &config).unwrap();
        assert!(trace.converged);
        let last = trace.last();
        let step = solver.step_q(last, &channels, &config).unwrap();
        assert!(step.psi <= ZERO_SLACK);
        let state = WcumState { covs: step.covs, lambdas: step.lambdas, ..last.clone() };
        let (t, _, u) = solver.step_t(&state, &channels, &config).unwrap();
        for k in 0..2 {
            assert!((t[k] - last.t[k]).abs() <= 1e-5 * last.t[k].max(1.0), "user {k}: {} vs {}", t[k], last.t[k]);
        }
        assert!((u - last.utility_value).abs() <= 1e-6);
    }

    #[test]
    fn positive_headroom_strictly_increases_utility() {
        for seed in 0..3 {
            let (config, channels) = random_instance(3, 2, 0.1, 25 + seed);
            let trace = Wcum::new(WcumOptions { max_iters: 3, ..WcumOptions::default() }).run(&channels, &config).unwrap();
            for w in trace.states.windows(2) {
                if w[1].psi.unwrap() > ZERO_SLACK && w[1].t != w[0].t {
                    assert!(w[1].utility_value > w[0].utility_value);
                }
            }
            assert!(trace.states[1].utility_value > trace.states[0].utility_value);
        }
    }

    #[test]
    fn best_of_keeps_the_higher_converged_start() {
        let (config, channels) = random_instance(2, 2, 0.1, 6);
        let solver = Wcum::default();
        let starts = [Initialization::Mrt, Initialization::Zero];
        let best = solver.run_best_of(&starts, &channels, &config).unwrap();
        assert!(best.converged);
        for init in starts {
            let single = Wcum::new(WcumOptions { init, ..Default::default() }).run(&channels, &config).unwrap();
            assert!(best.last().utility_value >= single.last().utility_value);
        }
        let only = solver.run_best_of(&[Initialization::Mrt], &channels, &config).unwrap();
        assert_eq!(only, solver.run(&channels, &config).unwrap());
        assert!(solver.run_best_of(&[], &channels, &config).is_err());
    }

    #[test]
    fn pull_back_restores_previous_targets() {
        let (config, channels) = random_instance(3, 2, 0.1, 26);
        let solver = Wcum::default();
        let prev = solver.initial_state(&channels, &config).unwrap();
        // Zero covariances certify nothing; the pull-back has to move
        // nearly all the way to the previous iterate.
        let zero = CovarianceSet::zeros(3, 2);
        let (covs, lambdas, alpha) = solver.pull_back(&prev, &zero, &channels, &config).unwrap();
        assert!(alpha > 0.0 && alpha <= 1.0);
        for k in 0..2 {
            assert!(constraint_margin(prev.t[k], lambdas[k], &covs, &channels, &config, k).unwrap() >= 0.0);
        }
        let (same, _, alpha) = solver.pull_back(&prev, &prev.covs, &channels, &config).unwrap();
        assert!(alpha < 1e-12);
        assert!((same.total_power() - prev.covs.total_power()).abs() < 1e-12);
    }
}
