//! The robust SINR constraint of one user written as a linear matrix
//! inequality.
//!
//! For user `k` with target `t`, multiplier `λ ≥ 0` and covariances `{Q_i}`,
//!
//! ```text
//! Φ_k = Y_k(Q_k − t Σ_{ℓ≠k} Q_ℓ) + diag(λ I, −λ r_k² − t σ_k²)
//! Y_k(Q) = [I; ĥ_kᴴ] Q [I; ĥ_kᴴ]ᴴ
//! ```
//!
//! `Φ_k ⪰ 0` holds iff the SINR of user `k` is at least `t` for every channel
//! error with `‖e_k‖ ≤ r_k`. Every eigenvalue of `Φ_k` is nonincreasing in
//! `t`, which is what makes bisection on `t` valid.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{hermitian_defect, hermitian_eigen, quad_form, CMatrix, CVector, C64};
use crate::model::{ChannelSet, CovarianceSet, SystemConfig};

/// Default absolute bisection tolerance on `t`.
pub const DEFAULT_T_TOL: f64 = 1e-6;
/// How many times a too-narrow bracket is doubled before giving up.
pub const MAX_BRACKET_DOUBLINGS: usize = 8;

/// An assembled `Φ_k` together with the arguments that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct LmiBlock {
    pub matrix: CMatrix,
    pub user_index: usize,
    pub t: f64,
    pub lambda: f64,
}

/// Smallest eigenpair of a Hermitian matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub value: f64,
    pub vector: CVector,
}

/// `[I; ĥᴴ] Q [I; ĥᴴ]ᴴ`, an `(n+1)×(n+1)` Hermitian matrix.
pub fn build_y(q: &CMatrix, estimate: &CVector) -> Result<CMatrix> {
    let n = estimate.len();
    if q.nrows() != n || q.ncols() != n {
        return invalid(format!("Q is {}x{} but the estimate has dimension {n}", q.nrows(), q.ncols()));
    }
    let qh = q * estimate;
    let hq = estimate.adjoint() * q;
    let mut y = CMatrix::zeros(n + 1, n + 1);
    y.view_mut((0, 0), (n, n)).copy_from(q);
    y.view_mut((0, n), (n, 1)).copy_from(&qh);
    y.view_mut((n, 0), (1, n)).copy_from(&hq);
    y[(n, n)] = (estimate.adjoint() * qh)[(0, 0)];
    Ok(y)
}

fn check_user(covs: &CovarianceSet, channels: &ChannelSet, config: &SystemConfig, k: usize) -> Result<()> {
    channels.check_against(config)?;
    if covs.n_users() != config.n_users {
        return invalid(format!("{} covariances for {} users", covs.n_users(), config.n_users));
    }
    if k >= config.n_users {
        return invalid(format!("user index {k} out of range for {} users", config.n_users));
    }
    Ok(())
}

/// Assemble `Φ_k(t, λ, {Q_i})`.
pub fn build_phi(
    t: f64,
    lambda: f64,
    covs: &CovarianceSet,
    channels: &ChannelSet,
    config: &SystemConfig,
    k: usize,
) -> Result<LmiBlock> {
    if !(t.is_finite() && t >= 0.0) {
        return invalid(format!("t must be finite and >= 0, got {t}"));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return invalid(format!("lambda must be finite and >= 0, got {lambda}"));
    }
    check_user(covs, channels, config, k)?;
    let n = config.n_tx;
    let combined = &covs.matrices[k] - covs.interference(k).scale(t);
    let mut matrix = build_y(&combined, &channels.estimates[k])?;
    for i in 0..n {
        matrix[(i, i)] += C64::new(lambda, 0.0);
    }
    let r = channels.radii[k];
    matrix[(n, n)] -= C64::new(lambda * r * r + t * config.noise_powers[k], 0.0);
    Ok(LmiBlock { matrix, user_index: k, t, lambda })
}

/// Smallest eigenvalue of `block` with a unit-norm eigenvector.
pub fn min_eig(block: &LmiBlock) -> Result<EigenPair> {
    min_eig_matrix(&block.matrix)
}

pub fn min_eig_matrix(m: &CMatrix) -> Result<EigenPair> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return invalid(format!("expected a nonempty square matrix, got {}x{}", m.nrows(), m.ncols()));
    }
    let scale = m.iter().map(|z| z.norm()).fold(1.0_f64, f64::max);
    let defect = hermitian_defect(m);
    if !(defect <= 1e-9 * scale) {
        return invalid(format!("matrix is not Hermitian (defect {defect:.3e})"));
    }
    let (values, vectors) = hermitian_eigen(m);
    Ok(EigenPair { value: values[0], vector: vectors.column(0).into_owned() })
}

/// Smallest eigenvalue of user `k`'s robust constraint at `(t, λ)`.
///
/// For `r_k > 0` this is `λ_min(Φ_k)`. When `r_k = 0` the uncertainty ball is
/// a single point and the multiplier is vacuous: the LMI is only tight in
/// the limit `λ → ∞`, where it reduces to the scalar
/// `ĥ_kᴴ(Q_k − t Σ_{ℓ≠k} Q_ℓ)ĥ_k − t σ_k²`, which is returned instead and
/// `λ` is ignored.
pub fn constraint_margin(
    t: f64,
    lambda: f64,
    covs: &CovarianceSet,
    channels: &ChannelSet,
    config: &SystemConfig,
    k: usize,
) -> Result<f64> {
    if channels.radii.get(k).copied() == Some(0.0) {
        check_user(covs, channels, config, k)?;
        if !(t.is_finite() && t >= 0.0) {
            return invalid(format!("t must be finite and >= 0, got {t}"));
        }
        let h = &channels.estimates[k];
        let signal = quad_form(&covs.matrices[k], h);
        let interference = quad_form(&covs.interference(k), h);
        return Ok(signal - t * (interference + config.noise_powers[k]));
    }
    Ok(min_eig(&build_phi(t, lambda, covs, channels, config, k)?)?.value)
}

/// Upper bound on any achievable worst-case SINR target of user `k`:
/// full power on the best channel in the ball, no interference.
pub fn sinr_upper_bound(channels: &ChannelSet, config: &SystemConfig, k: usize) -> f64 {
    let reach = channels.estimates[k].norm() + channels.radii[k];
    config.power_budget * reach * reach / config.noise_powers[k]
}

/// Outcome of the per-user bisection on `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibleT {
    pub t: f64,
    /// Set when the constraint is already violated at `t = 0`.
    pub infeasible_at_zero: bool,
}

/// Largest `t ∈ [0, t_hi]` whose constraint margin is nonnegative, to
/// absolute precision `tol`. The returned value is always a point where the
/// margin was evaluated and found nonnegative.
pub fn max_feasible_t(
    lambda: f64,
    covs: &CovarianceSet,
    channels: &ChannelSet,
    config: &SystemConfig,
    k: usize,
    t_hi: f64,
    tol: f64,
) -> Result<FeasibleT> {
    if !(t_hi.is_finite() && t_hi > 0.0) {
        return invalid(format!("t_hi must be finite and > 0, got {t_hi}"));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return invalid(format!("tol must be finite and > 0, got {tol}"));
    }
    let margin = |t: f64| constraint_margin(t, lambda, covs, channels, config, k);
    let at_zero = margin(0.0)?;
    if at_zero < -tol {
        return Ok(FeasibleT { t: 0.0, infeasible_at_zero: true });
    }
    let at_hi = margin(t_hi)?;
    if at_hi >= 0.0 {
        return Err(Error::BracketTooNarrow { t_hi, min_eig: at_hi });
    }
    let (mut lo, mut hi) = (0.0, t_hi);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if margin(mid)? >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(FeasibleT { t: lo, infeasible_at_zero: false })
}

/// [`max_feasible_t`] with the default bracket, doubled on demand.
pub fn max_feasible_t_auto(
    lambda: f64,
    covs: &CovarianceSet,
    channels: &ChannelSet,
    config: &SystemConfig,
    k: usize,
    tol: f64,
) -> Result<FeasibleT> {
    check_user(covs, channels, config, k)?;
    let mut t_hi = sinr_upper_bound(channels, config, k).max(tol);
    let mut attempt = 0;
    loop {
        match max_feasible_t(lambda, covs, channels, config, k, t_hi, tol) {
            Err(Error::BracketTooNarrow { .. }) if attempt < MAX_BRACKET_DOUBLINGS => {
                attempt += 1;
                t_hi *= 2.0;
            }
            other => return other,
        }
    }
}

/// Golden-section iterations cap for the multiplier search.
const MAX_LAMBDA_STEPS: usize = 200;
const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Multiplier maximizing `λ_min(Φ_k)` at a fixed target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaOptimum {
    pub lambda: f64,
    pub min_eig: f64,
}

/// Maximizes the concave map `λ ↦ λ_min(Φ_k(t, λ))` over `λ ≥ 0` by
/// golden-section search, returning as soon as the value reaches `stop_at`.
///
/// Since `λ_min(Φ_k) ≤ [Φ_k]_{n+1,n+1} = c − λ r_k²`, the maximizer lies in
/// `[0, (c − λ_min(Φ_k(t, 0)))/r_k²]`. Users with `r_k = 0` have `λ = 0` and
/// the scalar margin.
pub fn best_lambda(
    t: f64,
    covs: &CovarianceSet,
    channels: &ChannelSet,
    config: &SystemConfig,
    k: usize,
    stop_at: f64,
) -> Result<LambdaOptimum> {
    let f = |lambda: f64| constraint_margin(t, lambda, covs, channels, config, k);
    let at_zero = f(0.0)?;
    let r = channels.radii[k];
    if r == 0.0 || at_zero >= stop_at {
        return Ok(LambdaOptimum { lambda: 0.0, min_eig: at_zero });
    }
    let phi0 = build_phi(t, 0.0, covs, channels, config, k)?.matrix;
    let n = config.n_tx;
    let corner = phi0[(n, n)].re;
    let (mut lo, mut hi) = (0.0, ((corner - at_zero) / (r * r)).max(0.0));
    let mut best = LambdaOptimum { lambda: 0.0, min_eig: at_zero };
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let (mut f1, mut f2) = (f(x1)?, f(x2)?);
    for _ in 0..MAX_LAMBDA_STEPS {
        for (x, v) in [(x1, f1), (x2, f2)] {
            if v > best.min_eig {
                best = LambdaOptimum { lambda: x, min_eig: v };
            }
        }
        if best.min_eig >= stop_at || hi - lo <= 1e-13 * (1.0 + hi) {
            break;
        }
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2)?;
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1)?;
        }
    }
    Ok(best)
}

/// Outcome of the bisection on `t` with the multiplier free.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustTarget {
    pub t: f64,
    /// A multiplier certifying `Φ_k(t, λ) ⪰ 0`.
    pub lambda: f64,
    pub min_eig: f64,
}

/// Stopping rule of the bisection: `hi − lo ≤ max(abs, rel·hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Precision {
    pub abs: f64,
    pub rel: f64,
}

impl Precision {
    pub fn absolute(abs: f64) -> Self {
        Self { abs, rel: 0.0 }
    }

    fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(ok(self.abs) && ok(self.rel) && self.abs + self.rel > 0.0) {
            return invalid(format!("bad bisection precision {self:?}"));
        }
        Ok(())
    }
}

/// Largest `t` for which some `λ ≥ 0` gives `Φ_k(t, λ, covs) ⪰ 0`: the
/// worst-case SINR of user `k` over its error ball. The nominal SINR
/// (zero error) bounds it from above and `t = 0` is always feasible.
pub fn max_robust_target(
    covs: &CovarianceSet,
    channels: &ChannelSet,
    config: &SystemConfig,
    k: usize,
    precision: Precision,
) -> Result<RobustTarget> {
    check_user(covs, channels, config, k)?;
    precision.validate()?;
    let h = &channels.estimates[k];
    let signal = quad_form(&covs.matrices[k], h).max(0.0);
    let interference = quad_form(&covs.interference(k), h).max(0.0);
    let nominal = signal / (interference + config.noise_powers[k]);
    if channels.radii[k] == 0.0 || nominal == 0.0 {
        let min_eig = constraint_margin(nominal, 0.0, covs, channels, config, k)?;
        return Ok(RobustTarget { t: nominal, lambda: 0.0, min_eig });
    }
    let feasible = |t: f64| best_lambda(t, covs, channels, config, k, 0.0);
    let at_hi = feasible(nominal)?;
    if at_hi.min_eig >= 0.0 {
        return Ok(RobustTarget { t: nominal, lambda: at_hi.lambda, min_eig: at_hi.min_eig });
    }
    let at_zero = feasible(0.0)?;
    let mut found = RobustTarget { t: 0.0, lambda: at_zero.lambda, min_eig: at_zero.min_eig };
    let (mut lo, mut hi) = (0.0, nominal);
    while hi - lo > precision.abs.max(precision.rel * hi) {
        let mid = 0.5 * (lo + hi);
        let opt = feasible(mid)?;
        if opt.min_eig >= 0.0 {
            lo = mid;
            found = RobustTarget { t: mid, lambda: opt.lambda, min_eig: opt.min_eig };
        } else {
            hi = mid;
        }
    }
    Ok(found)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{hermitian_eigenvalues, outer};
    use crate::model::{complex_gaussian, sample_channels};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn random_psd(n: usize, rng: &mut ChaCha8Rng) -> CMatrix {
        let a = CMatrix::from_fn(n, n, |_, _| complex_gaussian(rng));
        &a * a.adjoint()
    }

    fn random_instance(n: usize, k: usize, seed: u64) -> (SystemConfig, ChannelSet, CovarianceSet) {
        let config = SystemConfig::sum_rate(n, k, 10.0, 0.01).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let channels = ChannelSet::new(sample_channels(&config, seed), (0..k).map(|_| rng.random_range(0.0..0.5)).collect()).unwrap();
        let mut covs = CovarianceSet::new((0..k).map(|_| random_psd(n, &mut rng)).collect());
        let scale = 10.0 / covs.total_power();
        covs = covs.scaled(scale);
        (config, channels, covs)
    }

    #[test]
    fn y_of_zero_and_identity() {
        let h = CVector::from_vec(vec![c(1.0), c(0.0)]);
        assert_eq!(build_y(&CMatrix::zeros(2, 2), &h).unwrap(), CMatrix::zeros(3, 3));
        let y = build_y(&CMatrix::identity(2, 2), &h).unwrap();
        let expected = CMatrix::from_row_slice(3, 3, &[c(1.0), c(0.0), c(1.0), c(0.0), c(1.0), c(0.0), c(1.0), c(0.0), c(1.0)]);
        assert_eq!(y, expected);
        assert!(build_y(&CMatrix::identity(3, 3), &h).is_err());
    }

    #[test]
    fn y_preserves_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let n = rng.random_range(1..=4);
            let q = random_psd(n, &mut rng);
            let h = CVector::from_fn(n, |_, _| complex_gaussian(&mut rng));
            let y = build_y(&q, &h).unwrap();
            assert!(hermitian_eigenvalues(&y)[0] >= -1e-10 * (1.0 + q.norm()));
        }
    }

    #[test]
    fn phi_special_cases() {
        let (config, channels, covs) = random_instance(3, 2, 1);
        let block = build_phi(0.0, 0.0, &covs, &channels, &config, 0).unwrap();
        assert_eq!(block.matrix, build_y(&covs.matrices[0], &channels.estimates[0]).unwrap());
        assert!(min_eig(&block).unwrap().value >= -1e-10);

        let channels = channels.at_radius(0.1).unwrap();
        let zero = CovarianceSet::zeros(3, 2);
        let block = build_phi(0.0, 1.0, &zero, &channels, &config, 1).unwrap();
        let mut expected = CMatrix::identity(4, 4);
        expected[(3, 3)] = c(-0.01);
        assert!((block.matrix - expected).norm() < 1e-15);

        assert!(build_phi(-1.0, 0.0, &covs, &channels, &config, 0).is_err());
        assert!(build_phi(0.0, -1.0, &covs, &channels, &config, 0).is_err());
        assert!(build_phi(0.0, 0.0, &covs, &channels, &config, 2).is_err());
    }

    #[test]
    fn phi_matches_scalar_assembly() {
        for seed in 0..10 {
            let (config, channels, covs) = random_instance(2, 2, seed);
            let (t, lambda) = (1.7 + seed as f64, 0.3 * seed as f64);
            for k in 0..2 {
                let block = build_phi(t, lambda, &covs, &channels, &config, k).unwrap();
                let h = &channels.estimates[k];
                let r = channels.radii[k];
                let n = 2;
                // M = Q_k - t Σ_{l≠k} Q_l, entry by entry.
                let m = |i: usize, j: usize| {
                    let mut v = covs.matrices[k][(i, j)];
                    for l in 0..2 {
                        if l != k {
                            v -= covs.matrices[l][(i, j)] * t;
                        }
                    }
                    v
                };
                for i in 0..=n {
                    for j in 0..=n {
                        let mut expected = C64::new(0.0, 0.0);
                        match (i < n, j < n) {
                            (true, true) => {
                                expected = m(i, j);
                                if i == j {
                                    expected += lambda;
                                }
                            }
                            (true, false) => {
                                for b in 0..n {
                                    expected += m(i, b) * h[b];
                                }
                            }
                            (false, true) => {
                                for a in 0..n {
                                    expected += h[a].conj() * m(a, j);
                                }
                            }
                            (false, false) => {
                                for a in 0..n {
                                    for b in 0..n {
                                        expected += h[a].conj() * m(a, b) * h[b];
                                    }
                                }
                                expected -= lambda * r * r + t * config.noise_powers[k];
                            }
                        }
                        assert!((block.matrix[(i, j)] - expected).norm() < 1e-12 * (1.0 + expected.norm()));
                    }
                }
            }
        }
    }

    #[test]
    fn min_eig_of_simple_blocks() {
        let id = LmiBlock { matrix: CMatrix::identity(4, 4), user_index: 0, t: 0.0, lambda: 0.0 };
        let pair = min_eig(&id).unwrap();
        assert!((pair.value - 1.0).abs() < 1e-14);
        assert!((pair.vector.norm() - 1.0).abs() < 1e-12);

        let mut d = CMatrix::identity(4, 4);
        d[(3, 3)] = c(-0.01);
        let pair = min_eig_matrix(&d).unwrap();
        assert!((pair.value + 0.01).abs() < 1e-14);
        assert!((pair.vector[3].norm() - 1.0).abs() < 1e-12);

        let mut bad = CMatrix::identity(2, 2);
        bad[(0, 1)] = c(1.0);
        assert!(min_eig_matrix(&bad).is_err());
    }

    /// Jacobi rotations on the real symmetric embedding; independent of the
    /// nalgebra solver used by `min_eig`.
    fn jacobi_eigenvalues(h: &CMatrix) -> Vec<f64> {
        let n = h.nrows();
        let mut a = nalgebra::DMatrix::<f64>::zeros(2 * n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = h[(i, j)].re;
                a[(i + n, j + n)] = h[(i, j)].re;
                a[(i, j + n)] = -h[(i, j)].im;
                a[(i + n, j)] = h[(i, j)].im;
            }
        }
        let m = 2 * n;
        for _sweep in 0..100 {
            let off: f64 = (0..m).flat_map(|i| (0..m).filter(move |j| *j != i).map(move |j| (i, j))).map(|(i, j)| a[(i, j)].powi(2)).sum();
            if off < 1e-30 {
                break;
            }
            for p in 0..m {
                for q in p + 1..m {
                    if a[(p, q)].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let cs = 1.0 / (t * t + 1.0).sqrt();
                    let sn = t * cs;
                    for kk in 0..m {
                        let (akp, akq) = (a[(kk, p)], a[(kk, q)]);
                        a[(kk, p)] = cs * akp - sn * akq;
                        a[(kk, q)] = sn * akp + cs * akq;
                    }
                    for kk in 0..m {
                        let (apk, aqk) = (a[(p, kk)], a[(q, kk)]);
                        a[(p, kk)] = cs * apk - sn * aqk;
                        a[(q, kk)] = sn * apk + cs * aqk;
                    }
                }
            }
        }
        let mut d: Vec<f64> = (0..m).map(|i| a[(i, i)]).collect();
        d.sort_by(f64::total_cmp);
        d.chunks(2).map(|p| 0.5 * (p[0] + p[1])).collect()
    }

    #[test]
    fn min_eig_matches_jacobi_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let a = CMatrix::from_fn(5, 5, |_, _| complex_gaussian(&mut rng));
            let h = (&a + a.adjoint()).scale(0.5);
            let pair = min_eig_matrix(&h).unwrap();
            let oracle = jacobi_eigenvalues(&h);
            assert!((pair.value - oracle[0]).abs() < 1e-9, "{} vs {}", pair.value, oracle[0]);
            let residual = (&h * &pair.vector - pair.vector.scale(pair.value)).norm();
            assert!(residual <= 1e-8 * h.norm());
        }
    }

    #[test]
    fn eigenvalues_nonincreasing_in_t() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for seed in 0..300 {
            let n = 1 + (seed as usize % 4);
            let (config, channels, covs) = random_instance(n, 2, seed);
            let lambda = rng.random_range(0.0..5.0);
            let t1 = rng.random_range(0.0..50.0);
            let t2 = t1 + rng.random_range(0.0..50.0);
            let a = hermitian_eigenvalues(&build_phi(t1, lambda, &covs, &channels, &config, 0).unwrap().matrix);
            let b = hermitian_eigenvalues(&build_phi(t2, lambda, &covs, &channels, &config, 0).unwrap().matrix);
            for (x, y) in a.iter().zip(&b) {
                assert!(*y <= *x + 1e-9 * (1.0 + x.abs()), "eigenvalue rose from {x} to {y}");
            }
        }
    }

    #[test]
    fn phi_is_affine_in_each_argument() {
        let (config, channels, covs) = random_instance(3, 2, 5);
        let (_, _, other) = random_instance(3, 2, 6);
        let phi = |t: f64, l: f64, q: &CovarianceSet| build_phi(t, l, q, &channels, &config, 1).unwrap().matrix;
        let alpha = 0.37;
        let d = phi(alpha * 2.0 + (1.0 - alpha) * 9.0, 1.5, &covs) - (phi(2.0, 1.5, &covs).scale(alpha) + phi(9.0, 1.5, &covs).scale(1.0 - alpha));
        assert!(d.norm() < 1e-10);
        let d = phi(3.0, alpha * 0.2 + (1.0 - alpha) * 4.0, &covs) - (phi(3.0, 0.2, &covs).scale(alpha) + phi(3.0, 4.0, &covs).scale(1.0 - alpha));
        assert!(d.norm() < 1e-10);
        let mixed = CovarianceSet::new(covs.matrices.iter().zip(&other.matrices).map(|(a, b)| a.scale(alpha) + b.scale(1.0 - alpha)).collect());
        let d = phi(3.0, 1.0, &mixed) - (phi(3.0, 1.0, &covs).scale(alpha) + phi(3.0, 1.0, &other).scale(1.0 - alpha));
        assert!(d.norm() < 1e-10 * (1.0 + phi(3.0, 1.0, &covs).norm()));
    }

    #[test]
    fn min_eig_concave_in_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for seed in 0..200 {
            let (config, channels, covs) = random_instance(3, 2, seed);
            let t = rng.random_range(0.0..20.0);
            let (l1, l2) = (rng.random_range(0.0..10.0), rng.random_range(0.0..10.0));
            let f = |l: f64| min_eig(&build_phi(t, l, &covs, &channels, &config, 0).unwrap()).unwrap().value;
            assert!(f(0.5 * (l1 + l2)) >= 0.5 * (f(l1) + f(l2)) - 1e-9);
        }
    }

    #[test]
    fn zero_covariances_force_zero_target() {
        let config = SystemConfig::sum_rate(2, 2, 10.0, 0.01).unwrap();
        let channels = ChannelSet::with_radius(sample_channels(&config, 1), 0.1).unwrap();
        let zero = CovarianceSet::zeros(2, 2);
        let got = max_feasible_t(0.0, &zero, &channels, &config, 0, 100.0, 1e-6).unwrap();
        assert_eq!(got.t, 0.0);
        assert!(!got.infeasible_at_zero);
    }

    #[test]
    fn single_antenna_perfect_csi_reaches_snr() {
        let config = SystemConfig::sum_rate(1, 1, 10.0, 0.01).unwrap();
        let h = CVector::from_vec(vec![c(1.0)]);
        let channels = ChannelSet::with_radius(vec![h.clone()], 0.0).unwrap();
        let covs = CovarianceSet::new(vec![outer(&h).scale(10.0)]);
        let best = [0.0, 1e-3, 1.0, 1e3, 1e6, 1e9]
            .iter()
            .map(|l| max_feasible_t_auto(*l, &covs, &channels, &config, 0, 1e-6).unwrap().t)
            .fold(0.0, f64::max);
        assert!((best - 1000.0).abs() <= 1e-6, "{best}");
    }

    #[test]
    fn lambda_sweep_on_phi_approaches_snr() {
        // Same instance with a tiny radius so the matrix path is exercised:
        // sup over λ of the feasible t tends to P(‖ĥ‖ - r)²/σ².
        let config = SystemConfig::sum_rate(1, 1, 10.0, 0.01).unwrap();
        let h = CVector::from_vec(vec![c(1.0)]);
        let r = 1e-6;
        let channels = ChannelSet::with_radius(vec![h.clone()], r).unwrap();
        let covs = CovarianceSet::new(vec![outer(&h).scale(10.0)]);
        let best = (0..40)
            .map(|i| 10f64.powf(-2.0 + 0.25 * i as f64))
            .map(|l| max_feasible_t_auto(l, &covs, &channels, &config, 0, 1e-7).unwrap().t)
            .fold(0.0, f64::max);
        let exact = 10.0 * (1.0 - r) * (1.0 - r) / 0.01;
        assert!((best - exact).abs() / exact < 1e-3, "{best} vs {exact}");
    }

    #[test]
    fn bisection_agrees_with_grid_scan() {
        let tol = 1e-4;
        for seed in 0..5 {
            let (config, channels, covs) = random_instance(2, 2, 40 + seed);
            let lambda = 0.5;
            let t_hi = sinr_upper_bound(&channels, &config, 0);
            let Ok(found) = max_feasible_t(lambda, &covs, &channels, &config, 0, t_hi, tol) else { panic!() };
            if found.infeasible_at_zero {
                continue;
            }
            // Feasible set is an interval [0, t*]; scan around the bisection
            // answer at resolution tol/2.
            let margin = |t: f64| constraint_margin(t, lambda, &covs, &channels, &config, 0).unwrap();
            let start = (found.t - 20.0 * tol).max(0.0);
            let mut last_feasible = start;
            let mut t = start;
            while t <= found.t + 20.0 * tol {
                if margin(t) >= 0.0 {
                    last_feasible = t;
                }
                t += tol / 2.0;
            }
            assert!((last_feasible - found.t).abs() <= tol, "{last_feasible} vs {}", found.t);
        }
    }

    #[test]
    fn narrow_bracket_is_reported() {
        let config = SystemConfig::sum_rate(1, 1, 10.0, 0.01).unwrap();
        let h = CVector::from_vec(vec![c(1.0)]);
        let channels = ChannelSet::with_radius(vec![h.clone()], 0.0).unwrap();
        let covs = CovarianceSet::new(vec![outer(&h).scale(10.0)]);
        assert!(matches!(
            max_feasible_t(0.0, &covs, &channels, &config, 0, 10.0, 1e-6),
            Err(Error::BracketTooNarrow { .. })
        ));
    }

    #[test]
    fn infeasible_start_is_flagged() {
        let config = SystemConfig::sum_rate(2, 1, 10.0, 0.01).unwrap();
        let h = CVector::from_vec(vec![c(1.0), c(0.0)]);
        let channels = ChannelSet::with_radius(vec![h], 0.5).unwrap();
        // No signal power and λ > 0 leaves −λr² in the corner.
        let covs = CovarianceSet::zeros(2, 1);
        let got = max_feasible_t(1.0, &covs, &channels, &config, 0, 10.0, 1e-6).unwrap();
        assert!(got.infeasible_at_zero);
        assert_eq!(got.t, 0.0);
    }

    #[test]
    fn best_lambda_matches_dense_grid() {
        for seed in 0..5 {
            let (config, channels, covs) = random_instance(3, 2, 60 + seed);
            let t = 0.5 * max_robust_target(&covs, &channels, &config, 0, Precision::absolute(1e-9)).unwrap().t + 0.1;
            let best = best_lambda(t, &covs, &channels, &config, 0, f64::INFINITY).unwrap();
            let margin = |l: f64| constraint_margin(t, l, &covs, &channels, &config, 0).unwrap();
            let top = (best.lambda * 4.0).max(1.0);
            let grid = (0..=4000).map(|i| margin(top * i as f64 / 4000.0)).fold(f64::NEG_INFINITY, f64::max);
            assert!(best.min_eig >= grid - 1e-9 * (1.0 + grid.abs()), "seed {seed}: {} < {grid}", best.min_eig);
            assert!((margin(best.lambda) - best.min_eig).abs() < 1e-12 * (1.0 + grid.abs()));
        }
    }

    #[test]
    fn best_lambda_stops_at_requested_value() {
        let (config, channels, covs) = random_instance(2, 2, 71);
        let opt = best_lambda(0.0, &covs, &channels, &config, 1, f64::NEG_INFINITY).unwrap();
        assert_eq!(opt.lambda, 0.0);
    }

    #[test]
    fn robust_target_single_user_closed_form() {
        let config = SystemConfig::sum_rate(2, 1, 10.0, 0.01).unwrap();
        let h = CVector::from_vec(vec![c(1.0), c(0.0)]);
        let channels = ChannelSet::with_radius(vec![h.clone()], 0.1).unwrap();
        let covs = CovarianceSet::new(vec![outer(&h).scale(10.0)]);
        let got = max_robust_target(&covs, &channels, &config, 0, Precision { abs: 0.0, rel: 1e-12 }).unwrap();
        assert!((got.t - 810.0).abs() / 810.0 < 1e-9, "{}", got.t);
        assert!(constraint_margin(got.t, got.lambda, &covs, &channels, &config, 0).unwrap() >= 0.0);
    }

    #[test]
    fn robust_target_is_the_sampled_worst_case() {
        // Boundary sampling can only miss the minimum upward; in two complex
        // dimensions 10⁵ samples get within a fraction of a percent.
        use crate::model::{ErrorMode, ErrorSampler};
        use crate::model::sinr;
        for seed in 0..3 {
            let config = SystemConfig::sum_rate(2, 2, 10.0, 0.01).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let channels = ChannelSet::with_radius(sample_channels(&config, 80 + seed), 0.2).unwrap();
            let mut covs = CovarianceSet::new((0..2).map(|_| random_psd(2, &mut rng)).collect());
            covs = covs.scaled(10.0 / covs.total_power());
            for k in 0..2 {
                let exact = max_robust_target(&covs, &channels, &config, k, Precision { abs: 0.0, rel: 1e-10 }).unwrap().t;
                let mut sampler = ErrorSampler::new(0.2, 2, 1000 + seed, ErrorMode::Boundary).unwrap();
                let sampled = (0..100_000)
                    .map(|_| sinr(&covs, &(&channels.estimates[k] + sampler.draw()), k, &config).unwrap())
                    .fold(f64::INFINITY, f64::min);
                assert!(exact <= sampled * (1.0 + 1e-9), "seed {seed} user {k}: {exact} > {sampled}");
                assert!((sampled - exact) / exact.max(1e-12) < 5e-3, "seed {seed} user {k}: {exact} vs {sampled}");
            }
        }
    }

    #[test]
    fn free_multiplier_dominates_every_fixed_one() {
        for seed in 0..4 {
            let (config, channels, covs) = random_instance(3, 2, 90 + seed);
            let free = max_robust_target(&covs, &channels, &config, 0, Precision::absolute(1e-9)).unwrap();
            for lambda in [0.0, 0.1, 1.0, 10.0, 100.0, free.lambda] {
                let fixed = max_feasible_t_auto(lambda, &covs, &channels, &config, 0, 1e-9).unwrap();
                assert!(fixed.t <= free.t + 1e-6, "seed {seed} lambda {lambda}: {} > {}", fixed.t, free.t);
            }
        }
    }

    #[test]
    fn robust_target_degenerate_cases() {
        let (config, channels, covs) = random_instance(3, 2, 5);
        let zero = CovarianceSet::zeros(3, 2);
        assert_eq!(max_robust_target(&zero, &channels, &config, 0, Precision::absolute(1e-9)).unwrap().t, 0.0);
        let exact = ChannelSet::with_radius(channels.estimates.clone(), 0.0).unwrap();
        let got = max_robust_target(&covs, &exact, &config, 1, Precision::absolute(1e-9)).unwrap();
        let nominal = crate::model::sinr(&covs, &channels.estimates[1], 1, &config).unwrap();
        assert!((got.t - nominal).abs() <= 1e-8 * nominal.max(1.0));
        assert!(Precision { abs: 0.0, rel: 0.0 }.validate().is_err());
    }
}
