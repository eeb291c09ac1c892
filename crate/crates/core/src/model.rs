//! System description, achievable rates, utilities and random channel/error
//! generation.
//!
//! Power and noise are always linear-scale here; dB conversion is left to
//! the experiment front end.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{hermitian_defect, min_eigenvalue, quad_form, real_trace, CMatrix, CVector, C64};

/// Tolerance on `max |Q - Qᴴ|` for a covariance to count as Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-9;
/// Relative PSD tolerance: `λ_min(Q) ≥ -PSD_TOL·(1 + tr Q)`.
pub const PSD_TOL: f64 = 1e-8;
/// Absolute slack on the total power constraint.
pub const POWER_TOL: f64 = 1e-6;

/// Choice of system utility `U(R_1, …, R_K)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum UtilityKind {
    /// `(1/K) Σ R_k`.
    SumRate,
    /// `Σ w_k R_k` (not normalized).
    WeightedSumRate { weights: Vec<f64> },
    /// `Σ ln R_k`; undefined when any rate is zero.
    ProportionalFair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub n_tx: usize,
    pub n_users: usize,
    /// Total transmit power, linear scale.
    pub power_budget: f64,
    /// Per-user receiver noise power, linear scale.
    pub noise_powers: Vec<f64>,
    pub utility: UtilityKind,
}

impl SystemConfig {
    pub fn new(
        n_tx: usize,
        n_users: usize,
        power_budget: f64,
        noise_powers: Vec<f64>,
        utility: UtilityKind,
    ) -> Result<Self> {
        let config = Self { n_tx, n_users, power_budget, noise_powers, utility };
        config.validate()?;
        Ok(config)
    }

    /// Sum-rate system with identical noise power at every receiver.
    pub fn sum_rate(n_tx: usize, n_users: usize, power_budget: f64, noise_power: f64) -> Result<Self> {
        Self::new(n_tx, n_users, power_budget, vec![noise_power; n_users], UtilityKind::SumRate)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_tx == 0 || self.n_users == 0 {
            return invalid("n_tx and n_users must be at least 1");
        }
        if !(self.power_budget.is_finite() && self.power_budget > 0.0) {
            return invalid(format!("power budget must be finite and > 0, got {}", self.power_budget));
        }
        if self.noise_powers.len() != self.n_users {
            return invalid(format!(
                "expected {} noise powers, got {}",
                self.n_users,
                self.noise_powers.len()
            ));
        }
        if let Some(bad) = self.noise_powers.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return invalid(format!("noise powers must be finite and > 0, got {bad}"));
        }
        if let UtilityKind::WeightedSumRate { weights } = &self.utility {
            if weights.len() != self.n_users {
                return invalid(format!("expected {} utility weights, got {}", self.n_users, weights.len()));
            }
            if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
                return invalid("utility weights must be finite and > 0");
            }
        }
        Ok(())
    }
}

/// Channel estimates `ĥ_k` with spherical uncertainty radii `r_k`; the true
/// channel is `ĥ_k + e_k` with `‖e_k‖ ≤ r_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSet {
    #[serde(with = "serde_complex::vectors")]
    pub estimates: Vec<CVector>,
    pub radii: Vec<f64>,
}

impl ChannelSet {
    pub fn new(estimates: Vec<CVector>, radii: Vec<f64>) -> Result<Self> {
        let set = Self { estimates, radii };
        if set.estimates.is_empty() {
            return invalid("channel set is empty");
        }
        if set.radii.len() != set.estimates.len() {
            return invalid(format!(
                "{} estimates but {} radii",
                set.estimates.len(),
                set.radii.len()
            ));
        }
        let dim = set.estimates[0].len();
        if dim == 0 || set.estimates.iter().any(|h| h.len() != dim) {
            return invalid("channel estimates must share a nonzero dimension");
        }
        if set.radii.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return invalid("radii must be finite and >= 0");
        }
        Ok(set)
    }

    /// Same radius for every user.
    pub fn with_radius(estimates: Vec<CVector>, radius: f64) -> Result<Self> {
        let k = estimates.len();
        Self::new(estimates, vec![radius; k])
    }

    pub fn n_users(&self) -> usize {
        self.estimates.len()
    }

    pub fn n_tx(&self) -> usize {
        self.estimates[0].len()
    }

    pub fn check_against(&self, config: &SystemConfig) -> Result<()> {
        if self.n_users() != config.n_users || self.n_tx() != config.n_tx {
            return invalid(format!(
                "channel set is {}x{} (users x antennas) but config expects {}x{}",
                self.n_users(),
                self.n_tx(),
                config.n_users,
                config.n_tx
            ));
        }
        Ok(())
    }

    /// Copy with every radius replaced by `radius`.
    pub fn at_radius(&self, radius: f64) -> Result<Self> {
        Self::with_radius(self.estimates.clone(), radius)
    }
}

/// Per-user transmit covariances `Q_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSet {
    #[serde(with = "serde_complex::matrices")]
    pub matrices: Vec<CMatrix>,
}

impl CovarianceSet {
    pub fn new(matrices: Vec<CMatrix>) -> Self {
        Self { matrices }
    }

    pub fn zeros(n_tx: usize, n_users: usize) -> Self {
        Self { matrices: vec![CMatrix::zeros(n_tx, n_tx); n_users] }
    }

    /// Rank-one covariances `w_k w_kᴴ`.
    pub fn from_beamformers(beams: &[CVector]) -> Self {
        Self { matrices: beams.iter().map(|w| w * w.adjoint()).collect() }
    }

    pub fn n_users(&self) -> usize {
        self.matrices.len()
    }

    pub fn total_power(&self) -> f64 {
        self.matrices.iter().map(real_trace).sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { matrices: self.matrices.iter().map(|q| q.scale(factor)).collect() }
    }

    /// Sum of all covariances except user `k`'s.
    pub fn interference(&self, k: usize) -> CMatrix {
        let n = self.matrices[k].nrows();
        self.matrices
            .iter()
            .enumerate()
            .filter(|(l, _)| *l != k)
            .fold(CMatrix::zeros(n, n), |acc, (_, q)| acc + q)
    }

    /// Shape, Hermitian, PSD and power-budget checks.
    pub fn validate(&self, config: &SystemConfig) -> Result<()> {
        if self.matrices.len() != config.n_users {
            return invalid(format!(
                "expected {} covariances, got {}",
                config.n_users,
                self.matrices.len()
            ));
        }
        for (k, q) in self.matrices.iter().enumerate() {
            if q.nrows() != config.n_tx || q.ncols() != config.n_tx {
                return invalid(format!("covariance {k} is {}x{}, expected {n}x{n}", q.nrows(), q.ncols(), n = config.n_tx));
            }
            if q.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
                return invalid(format!("covariance {k} has non-finite entries"));
            }
            let defect = hermitian_defect(q);
            if defect > HERMITIAN_TOL {
                return invalid(format!("covariance {k} is not Hermitian (defect {defect:.3e})"));
            }
            let lmin = min_eigenvalue(q);
            if lmin < -PSD_TOL * (1.0 + real_trace(q).abs()) {
                return invalid(format!("covariance {k} is not PSD (min eigenvalue {lmin:.3e})"));
            }
        }
        let total = self.total_power();
        if total > config.power_budget + POWER_TOL {
            return invalid(format!(
                "total power {total:.9} exceeds budget {:.9}",
                config.power_budget
            ));
        }
        Ok(())
    }
}

/// SINR of user `k` when the true channel of that user is `channel`.
pub fn sinr(covs: &CovarianceSet, channel: &CVector, k: usize, config: &SystemConfig) -> Result<f64> {
    if k >= config.n_users || k >= covs.n_users() {
        return invalid(format!("user index {k} out of range for {} users", config.n_users));
    }
    if channel.len() != config.n_tx {
        return invalid(format!("channel has dimension {}, expected {}", channel.len(), config.n_tx));
    }
    if covs.matrices.iter().any(|q| q.nrows() != config.n_tx || q.ncols() != config.n_tx) {
        return invalid("covariance dimension does not match n_tx");
    }
    let signal = quad_form(&covs.matrices[k], channel).max(0.0);
    let interference: f64 = covs
        .matrices
        .iter()
        .enumerate()
        .filter(|(l, _)| *l != k)
        .map(|(_, q)| quad_form(q, channel).max(0.0))
        .sum();
    Ok(signal / (interference + config.noise_powers[k]))
}

/// Achievable rate `log2(1 + SINR_k)` in bits/sec/Hz.
pub fn rate(covs: &CovarianceSet, channel: &CVector, k: usize, config: &SystemConfig) -> Result<f64> {
    Ok(sinr(covs, channel, k, config)?.ln_1p() / std::f64::consts::LN_2)
}

/// `log2(1 + t)`.
pub fn rate_from_sinr(t: f64) -> f64 {
    t.max(0.0).ln_1p() / std::f64::consts::LN_2
}

pub fn utility(rates: &[f64], kind: &UtilityKind) -> Result<f64> {
    if rates.is_empty() {
        return invalid("no rates given");
    }
    if let Some(bad) = rates.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
        return invalid(format!("rates must be finite and >= 0, got {bad}"));
    }
    match kind {
        UtilityKind::SumRate => Ok(rates.iter().sum::<f64>() / rates.len() as f64),
        UtilityKind::WeightedSumRate { weights } => {
            if weights.len() != rates.len() {
                return invalid(format!("{} weights for {} rates", weights.len(), rates.len()));
            }
            Ok(weights.iter().zip(rates).map(|(w, r)| w * r).sum())
        }
        UtilityKind::ProportionalFair => {
            if rates.iter().any(|r| *r == 0.0) {
                return Err(Error::Domain("proportional-fair utility needs strictly positive rates".into()));
            }
            Ok(rates.iter().map(|r| r.ln()).sum())
        }
    }
}

/// Utility of the SINR targets `t_k` after the change of variables
/// `R_k = log2(1 + t_k)`.
pub fn utility_of_sinr(targets: &[f64], kind: &UtilityKind) -> Result<f64> {
    let rates: Vec<f64> = targets.iter().map(|t| rate_from_sinr(*t)).collect();
    utility(&rates, kind)
}

/// Deterministically mixes `index` into `base` (splitmix64 finalizer), so
/// that derived streams do not depend on how many siblings exist.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = index.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    base ^ (z ^ (z >> 31))
}

pub(crate) fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re * scale, im * scale)
}

/// I.i.d. CN(0, 1) channel estimates, one `n_tx` vector per user.
pub fn sample_channels(config: &SystemConfig, seed: u64) -> Vec<CVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..config.n_users)
        .map(|_| CVector::from_fn(config.n_tx, |_, _| complex_gaussian(&mut rng)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorMode {
    /// Uniform over the ball `‖e‖ ≤ r` in `2·dim` real dimensions.
    UniformBall,
    /// Uniform on the sphere `‖e‖ = r`.
    #[default]
    Boundary,
}

/// Stream of channel-error vectors inside (or on) a ball.
#[derive(Debug, Clone)]
pub struct ErrorSampler {
    rng: ChaCha8Rng,
    radius: f64,
    dim: usize,
    mode: ErrorMode,
}

impl ErrorSampler {
    pub fn new(radius: f64, dim: usize, seed: u64, mode: ErrorMode) -> Result<Self> {
        if !(radius.is_finite() && radius >= 0.0) {
            return invalid(format!("radius must be finite and >= 0, got {radius}"));
        }
        if dim == 0 {
            return invalid("error dimension must be >= 1");
        }
        Ok(Self { rng: ChaCha8Rng::seed_from_u64(seed), radius, dim, mode })
    }

    pub fn draw(&mut self) -> CVector {
        if self.radius == 0.0 {
            return CVector::zeros(self.dim);
        }
        let mut e = loop {
            let g = CVector::from_fn(self.dim, |_, _| complex_gaussian(&mut self.rng));
            let norm = g.norm();
            if norm > 1e-300 {
                break g.unscale(norm);
            }
        };
        let length = match self.mode {
            ErrorMode::Boundary => self.radius,
            ErrorMode::UniformBall => {
                let u: f64 = self.rng.random();
                self.radius * u.powf(1.0 / (2 * self.dim) as f64)
            }
        };
        e.scale_mut(length);
        // Rounding may push the norm one ulp past the radius.
        while e.norm() > self.radius {
            e.scale_mut(1.0 - f64::EPSILON);
        }
        e
    }
}

/// A single error vector with `‖e‖ ≤ radius`.
pub fn sample_error(radius: f64, dim: usize, seed: u64, mode: ErrorMode) -> Result<CVector> {
    Ok(ErrorSampler::new(radius, dim, seed, mode)?.draw())
}

/// Serde adapters storing complex vectors and matrices as nested
/// `[re, im]` pairs (matrices row-major).
pub mod serde_complex {
    use super::{CMatrix, CVector, C64};
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    type Pair = [f64; 2];

    pub fn vector_to_pairs(v: &CVector) -> Vec<Pair> {
        v.iter().map(|z| [z.re, z.im]).collect()
    }

    pub fn vector_from_pairs(p: &[Pair]) -> CVector {
        CVector::from_iterator(p.len(), p.iter().map(|[re, im]| C64::new(*re, *im)))
    }

    pub fn matrix_to_pairs(m: &CMatrix) -> Vec<Vec<Pair>> {
        (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
            .collect()
    }

    pub fn matrix_from_pairs(rows: &[Vec<Pair>]) -> Result<CMatrix, String> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err("ragged matrix rows".into());
        }
        Ok(CMatrix::from_fn(n, m, |i, j| C64::new(rows[i][j][0], rows[i][j][1])))
    }

    pub mod vectors {
        use super::*;

        pub fn serialize<S: Serializer>(v: &[CVector], s: S) -> Result<S::Ok, S::Error> {
            v.iter().map(vector_to_pairs).collect::<Vec<_>>().serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<CVector>, D::Error> {
            let raw: Vec<Vec<Pair>> = Vec::deserialize(d)?;
            Ok(raw.iter().map(|p| vector_from_pairs(p)).collect())
        }
    }

    pub mod matrices {
        use super::*;

        pub fn serialize<S: Serializer>(v: &[CMatrix], s: S) -> Result<S::Ok, S::Error> {
            v.iter().map(matrix_to_pairs).collect::<Vec<_>>().serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<CMatrix>, D::Error> {
            let raw: Vec<Vec<Vec<Pair>>> = Vec::deserialize(d)?;
            raw.iter().map(|m| matrix_from_pairs(m).map_err(D::Error::custom)).collect()
        }
    }
}
