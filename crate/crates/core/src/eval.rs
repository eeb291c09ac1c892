//! Worst-case evaluation of fixed designs: exact certification through the
//! S-lemma, Monte Carlo minimization over sampled channel errors, the naive
//! perfect-CSI baseline and a brute-force rank-one oracle for tiny systems.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conic::ConicBackend;
use crate::error::{invalid, Error, Result};
use crate::linalg::{hermitian_eigen, quad_form, CMatrix, CVector, C64};
use crate::lmi::{max_robust_target, Precision};
use crate::model::{derive_seed, rate, rate_from_sinr, utility, ChannelSet, CovarianceSet, ErrorMode, ErrorSampler, SystemConfig};
use crate::wcum::{finite_or_null, IterationTrace, StopReason, Wcum};

/// Bisection precision of the exact evaluators.
pub const EXACT_PRECISION: Precision = Precision { abs: 1e-12, rel: 1e-14 };
/// Samples drawn from one derived seed in the Monte Carlo evaluator.
pub const MC_CHUNK: usize = 4096;
/// Steps of the secular-equation bisection in the trust-region evaluator.
const SECULAR_STEPS: usize = 200;

fn check_user(covs: &CovarianceSet, channels: &ChannelSet, config: &SystemConfig, k: usize) -> Result<()> {
    channels.check_against(config)?;
    if covs.n_users() != config.n_users {
        return invalid(format!("{} covariances for {} users", covs.n_users(), config.n_users));
    }
    if covs.matrices.iter().any(|q| q.nrows() != config.n_tx || q.ncols() != config.n_tx) {
        return invalid("covariance dimension does not match n_tx");
    }
    if k >= config.n_users {
        return invalid(format!("user index {k} out of range for {} users", config.n_users));
    }
    Ok(())
}

/// Minimum SINR of user `k` over its error ball: the largest `t` with some
/// `λ ≥ 0` making `Φ_k(t, λ) ⪰ 0`.
pub fn exact_worst_sinr(covs: &CovarianceSet, channels: &ChannelSet, config: &SystemConfig, k: usize) -> Result<f64> {
    check_user(covs, channels, config, k)?;
    Ok(max_robust_target(covs, channels, config, k, EXACT_PRECISION)?.t)
}

pub fn exact_worst_rate(covs: &CovarianceSet, channels: &ChannelSet, config: &SystemConfig, k: usize) -> Result<f64> {
    Ok(rate_from_sinr(exact_worst_sinr(covs, channels, config, k)?))
}

/// Minimum over `‖e‖ ≤ r` of `(ĥ + e)ᴴ A (ĥ + e) − t σ²` with
/// `A = Q_k − t Σ_{ℓ≠k} Q_ℓ`, from the concave dual
/// `max_ν c − ν r² − Σ |g_i|²/(μ_i + ν)` over `ν ≥ max(0, −μ_min)`.
/// Every dual value is a lower bound on the minimum, so the result never
/// overstates it.
fn trust_region_margin(t: f64, covs: &CovarianceSet, channels: &ChannelSet, config: &SystemConfig, k: usize) -> f64 {
    let h = &channels.estimates[k];
    let a: CMatrix = &covs.matrices[k] - covs.interference(k).scale(t);
    let c = quad_form(&a, h) - t * config.noise_powers[k];
    let r = channels.radii[k];
    if r == 0.0 {
        return c;
    }
    let (mu, vectors) = hermitian_eigen(&a);
    let g: Vec<f64> = (vectors.adjoint() * (&a * h)).iter().map(|z| z.norm_sqr()).collect();
    let scale = mu.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let dual = |nu: f64| -> f64 {
        let mut v = c - nu * r * r;
        for (m, gi) in mu.iter().zip(&g) {
            let d = m + nu;
            if d > 0.0 {
                v -= gi / d;
            } else if *gi > 1e-30 * scale * scale {
                return f64::NEG_INFINITY;
            }
        }
        v
    };
    let slope = |nu: f64| -> f64 {
        let mut s = -r * r;
        for (m, gi) in mu.iter().zip(&g) {
            let d = m + nu;
            if d > 0.0 {
                s += gi / (d * d);
            } else if *gi > 1e-30 * scale * scale {
                return f64::INFINITY;
            }
        }
        s
    };
    let nu_lo = (-mu[0]).max(0.0);
    if slope(nu_lo) <= 0.0 {
        return dual(nu_lo);
    }
    let g_norm = g.iter().sum::<f64>().sqrt();
    let (mut lo, mut hi) = (nu_lo, nu_lo + g_norm / r);
    for _ in 0..SECULAR_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if slope(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    dual(lo).max(dual(hi))
}

/// [`exact_worst_sinr`] computed through the trust-region subproblem in the
/// error vector instead of the LMI. Used to score large candidate sets.
pub fn trust_region_worst_sinr(
    covs: &CovarianceSet,
    channels: &ChannelSet,
    config: &SystemConfig,
    k: usize,
    precision: Precision,
) -> Result<f64> {
    check_user(covs, channels, config, k)?;
    if !(precision.abs >= 0.0 && precision.rel >= 0.0 && precision.abs + precision.rel > 0.0) {
        return invalid(format!("bad bisection precision {precision:?}"));
    }
    let h = &channels.estimates[k];
    let signal = quad_form(&covs.matrices[k], h).max(0.0);
    let nominal = signal / (quad_form(&covs.interference(k), h).max(0.0) + config.noise_powers[k]);
    if nominal == 0.0 {
        return Ok(0.0);
    }
    if trust_region_margin(nominal, covs, channels, config, k) >= 0.0 {
        return Ok(nominal);
    }
    let (mut lo, mut hi) = (0.0, nominal);
    if trust_region_margin(0.0, covs, channels, config, k) < 0.0 {
        return Ok(0.0);
    }
    while hi - lo > precision.abs.max(precision.rel * hi) {
        let mid = 0.5 * (lo + hi);
        if trust_region_margin(mid, covs, channels, config, k) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Deterministic adversarial errors: zero and `±r` along `Q_k ĥ_k`, the
/// direction that extremizes the signal term.
pub fn adversarial_candidates(covs: &CovarianceSet, channels: &ChannelSet, k: usize) -> Vec<CVector> {
    let h = &channels.estimates[k];
    let r = channels.radii[k];
    let mut out = vec![CVector::zeros(h.len())];
    let d = &covs.matrices[k] * h;
    let norm = d.norm();
    if r > 0.0 && norm > 0.0 {
        let e = d.unscale(norm).scale(r);
        out.push(-&e);
        out.push(e);
    }
    out
}

/// Minimum rate of user `k` over `n_samples` boundary errors and the
/// [`adversarial_candidates`]. Samples are drawn in chunks of [`MC_CHUNK`]
/// from `derive_seed(seed, chunk)`, so a smaller `n_samples` sees a subset.
pub fn mc_worst_rate(
    covs: &CovarianceSet,
    channels: &ChannelSet,
    config: &SystemConfig,
    k: usize,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    mc_worst_rate_with_mode(covs, channels, config, k, n_samples, seed, ErrorMode::Boundary)
}

pub fn mc_worst_rate_with_mode(
    covs: &CovarianceSet,
    channels: &ChannelSet,
    config: &SystemConfig,
    k: usize,
    n_samples: usize,
    seed: u64,
    mode: ErrorMode,
) -> Result<f64> {
    check_user(covs, channels, config, k)?;
    if n_samples == 0 {
        return invalid("n_samples must be >= 1");
    }
    let h = &channels.estimates[k];
    let r = channels.radii[k];
    let mut worst = f64::INFINITY;
    for e in adversarial_candidates(covs, channels, k) {
        worst = worst.min(rate(covs, &(h + e), k, config)?);
    }
    let chunks = n_samples.div_ceil(MC_CHUNK);
    let sampled = (0..chunks)
        .into_par_iter()
        .map(|c| -> Result<f64> {
            let count = MC_CHUNK.min(n_samples - c * MC_CHUNK);
            let mut sampler = ErrorSampler::new(r, config.n_tx, derive_seed(seed, c as u64), mode)?;
            let mut m = f64::INFINITY;
            for _ in 0..count {
                m = m.min(rate(covs, &(h + sampler.draw()), k, config)?);
            }
            Ok(m)
        })
        .try_reduce(|| f64::INFINITY, |a, b| Ok(a.min(b)))?;
    Ok(worst.min(sampled))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserWorstCase {
    pub exact_worst_sinr: f64,
    pub exact_worst_rate: f64,
    pub mc_worst_rate: f64,
    pub mc_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseReport {
    pub per_user: Vec<UserWorstCase>,
    /// `-∞` (serialized as `null`) when the utility is undefined at these rates.
    #[serde(with = "finite_or_null")]
    pub utility_exact: f64,
    #[serde(with = "finite_or_null")]
    pub utility_mc: f64,
}

fn utility_or_neg_inf(rates: &[f64], config: &SystemConfig) -> Result<f64> {
    match utility(rates, &config.utility) {
        Ok(u) => Ok(u),
        Err(Error::Domain(_)) => Ok(f64::NEG_INFINITY),
        Err(e) => Err(e),
    }
}

/// Exact and Monte Carlo worst-case rates of every user. User `k` samples
/// with `derive_seed(seed, k)`.
pub fn worst_case_report(
    covs: &CovarianceSet,
    channels: &ChannelSet,
    config: &SystemConfig,
    mc_samples: usize,
    seed: u64,
) -> Result<WorstCaseReport> {
    let per_user = (0..config.n_users)
        .map(|k| {
            let exact_worst_sinr = exact_worst_sinr(covs, channels, config, k)?;
            Ok(UserWorstCase {
                exact_worst_sinr,
                exact_worst_rate: rate_from_sinr(exact_worst_sinr),
                mc_worst_rate: mc_worst_rate(covs, channels, config, k, mc_samples, derive_seed(seed, k as u64))?,
                mc_samples,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let exact: Vec<f64> = per_user.iter().map(|u| u.exact_worst_rate).collect();
    let mc: Vec<f64> = per_user.iter().map(|u| u.mc_worst_rate).collect();
    Ok(WorstCaseReport {
        utility_exact: utility_or_neg_inf(&exact, config)?,
        utility_mc: utility_or_neg_inf(&mc, config)?,
        per_user,
    })
}

/// Utility of the exact worst-case rates of a design.
pub fn exact_worst_utility(covs: &CovarianceSet, channels: &ChannelSet, config: &SystemConfig) -> Result<f64> {
    let rates = (0..config.n_users)
        .map(|k| exact_worst_rate(covs, channels, config, k))
        .collect::<Result<Vec<f64>>>()?;
    utility_or_neg_inf(&rates, config)
}

/// The alternation run on the estimates as if they were exact (all radii 0).
pub fn naive_trace<B: ConicBackend>(solver: &Wcum<B>, channels: &ChannelSet, config: &SystemConfig) -> Result<IterationTrace> {
    solver.run(&channels.at_radius(0.0)?, config)
}

/// Perfect-CSI design used as the naive baseline: the final covariances of
/// [`naive_trace`]. A solver failure is returned as an error.
pub fn naive_design<B: ConicBackend>(solver: &Wcum<B>, channels: &ChannelSet, config: &SystemConfig) -> Result<CovarianceSet> {
    let trace = naive_trace(solver, channels, config)?;
    if trace.stop_reason == StopReason::SolverFailure {
        return Err(Error::Solver(trace.failure.unwrap_or_default()));
    }
    Ok(trace.last().covs.clone())
}

/// Grid of the rank-one oracle. Beam directions are
/// `(cos θ, sin θ e^{iφ})` with `θ` on `theta_points` values spanning
/// `[0, π/2]` and `φ` on `phi_points` values spanning `[0, 2π)`; the power
/// split between two users takes `power_points` values spanning `[0, P]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridResolution {
    pub theta_points: usize,
    pub phi_points: usize,
    pub power_points: usize,
}

impl Default for GridResolution {
    fn default() -> Self {
        Self { theta_points: 7, phi_points: 12, power_points: 11 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleDesign {
    pub covs: CovarianceSet,
    /// Utility of the exact worst-case rates of `covs`.
    #[serde(with = "finite_or_null")]
    pub utility: f64,
}

/// Precision of the trust-region scoring inside the oracle search.
const ORACLE_SCORE_PRECISION: Precision = Precision { abs: 1e-9, rel: 1e-7 };

fn unit_directions(n_tx: usize, grid: &GridResolution) -> Vec<CVector> {
    if n_tx == 1 {
        return vec![CVector::from_element(1, C64::new(1.0, 0.0))];
    }
    let mut out = Vec::new();
    for i in 0..grid.theta_points {
        let theta = std::f64::consts::FRAC_PI_2 * i as f64 / (grid.theta_points - 1) as f64;
        // At the poles the phase is a global phase.
        let phases = if i == 0 || i + 1 == grid.theta_points { 1 } else { grid.phi_points };
        for j in 0..phases {
            let phi = std::f64::consts::TAU * j as f64 / grid.phi_points as f64;
            out.push(CVector::from_vec(vec![
                C64::new(theta.cos(), 0.0),
                C64::from_polar(theta.sin(), phi),
            ]));
        }
    }
    out
}

/// Exhaustive search over rank-one beamformers on `grid` with full power,
/// for `N_t ≤ 2` and `K ≤ 2`. Candidates are scored with
/// [`trust_region_worst_sinr`]; the winner is re-evaluated exactly.
pub fn oracle_grid_design(channels: &ChannelSet, config: &SystemConfig, grid: GridResolution) -> Result<OracleDesign> {
    channels.check_against(config)?;
    if config.n_tx > 2 || config.n_users > 2 {
        return Err(Error::TooLarge(format!(
            "oracle grid supports N_t <= 2 and K <= 2, got N_t = {} and K = {}",
            config.n_tx, config.n_users
        )));
    }
    if grid.theta_points < 2 || grid.phi_points < 1 || grid.power_points < 2 {
        return invalid(format!("grid too coarse: {grid:?}"));
    }
    let dirs = unit_directions(config.n_tx, &grid);
    let p = config.power_budget;
    let splits: Vec<Vec<f64>> = if config.n_users == 1 {
        vec![vec![p]]
    } else {
        (0..grid.power_points)
            .map(|i| {
                let a = i as f64 / (grid.power_points - 1) as f64;
                vec![a * p, (1.0 - a) * p]
            })
            .collect()
    };
    let build = |idx: &[usize], split: &[f64]| -> CovarianceSet {
        CovarianceSet::new(idx.iter().zip(split).map(|(&d, &pk)| crate::linalg::outer(&dirs[d]).scale(pk)).collect())
    };
    let combos: Vec<Vec<usize>> = if config.n_users == 1 {
        (0..dirs.len()).map(|d| vec![d]).collect()
    } else {
        (0..dirs.len()).flat_map(|a| (0..dirs.len()).map(move |b| vec![a, b])).collect()
    };
    let score = |idx: &[usize], split: &[f64]| -> Result<f64> {
        let covs = build(idx, split);
        let rates = (0..config.n_users)
            .map(|k| trust_region_worst_sinr(&covs, channels, config, k, ORACLE_SCORE_PRECISION).map(rate_from_sinr))
            .collect::<Result<Vec<f64>>>()?;
        utility_or_neg_inf(&rates, config)
    };
    // Ties go to the lowest candidate index so the result does not depend
    // on the parallel schedule.
    let better = |a: (f64, usize), b: (f64, usize)| -> (f64, usize) {
        if a.0 > b.0 || (a.0 == b.0 && a.1 < b.1) {
            a
        } else {
            b
        }
    };
    let n_splits = splits.len();
    let (_, best) = (0..combos.len() * n_splits)
        .into_par_iter()
        .map(|i| Ok((score(&combos[i / n_splits], &splits[i % n_splits])?, i)))
        .try_reduce(|| (f64::NEG_INFINITY, usize::MAX), |a, b| Ok(better(a, b)))?;
    let covs = build(&combos[best / n_splits], &splits[best % n_splits]);
    let utility = exact_worst_utility(&covs, channels, config)?;
    Ok(OracleDesign { covs, utility })
}
