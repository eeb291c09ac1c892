//! The covariance update: for fixed SINR targets `t`, find covariances and
//! multipliers that maximize the total eigenvalue headroom `Σ z_k` of the
//! robust constraints.

use super::{hermitian_basis, HermitianLmi, LinearConstraint, LinearSense, SdpProblem, SdpSolution, VarKind};
use crate::error::{invalid, Result};
use crate::linalg::{quad_form, CMatrix, C64};
use crate::lmi::build_y;
use crate::model::{ChannelSet, CovarianceSet, SystemConfig};

/// Variable-block indices of the covariance subproblem.
#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemVars {
    pub covariances: Vec<usize>,
    pub lambdas: Vec<usize>,
    pub slacks: Vec<usize>,
}

impl SubproblemVars {
    pub fn covariances(&self, problem: &SdpProblem, sol: &SdpSolution) -> CovarianceSet {
        CovarianceSet::new(self.covariances.iter().map(|b| sol.hermitian(&problem.variables[*b])).collect())
    }

    pub fn lambdas(&self, problem: &SdpProblem, sol: &SdpSolution) -> Vec<f64> {
        self.lambdas.iter().map(|b| sol.scalar(&problem.variables[*b])).collect()
    }

    pub fn slacks(&self, problem: &SdpProblem, sol: &SdpSolution) -> Vec<f64> {
        self.slacks.iter().map(|b| sol.scalar(&problem.variables[*b])).collect()
    }
}

/// ```text
/// maximize    Σ z_k
/// subject to  Φ_k(t_k, λ_k, {Q_i}) − z_k I ⪰ 0,   k = 1..K
///             Σ tr Q_k ≤ P,   Q_k ⪰ 0,   λ_k ≥ 0,   z_k ≥ 0
/// ```
///
/// Users with `r_k = 0` get the scalar form of their constraint (see
/// [`crate::lmi::constraint_margin`]) and `λ_k` pinned to zero.
pub fn build_subproblem_q(
    t_prev: &[f64],
    channels: &ChannelSet,
    config: &SystemConfig,
) -> Result<(SdpProblem, SubproblemVars)> {
    channels.check_against(config)?;
    let k_users = config.n_users;
    let n = config.n_tx;
    if t_prev.len() != k_users {
        return invalid(format!("{} targets for {k_users} users", t_prev.len()));
    }
    if t_prev.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return invalid("targets must be finite and >= 0");
    }

    let mut problem = SdpProblem::new();
    let covariances: Vec<usize> =
        (0..k_users).map(|k| problem.add_variable(format!("Q{k}"), VarKind::Hermitian(n))).collect();
    let lambdas: Vec<usize> = (0..k_users).map(|k| problem.add_variable(format!("lambda{k}"), VarKind::Scalar)).collect();
    let slacks: Vec<usize> = (0..k_users).map(|k| problem.add_variable(format!("z{k}"), VarKind::Scalar)).collect();
    let offset = |b: usize| problem.variables[b].offset;
    let q_off: Vec<usize> = covariances.iter().map(|b| offset(*b)).collect();
    let l_off: Vec<usize> = lambdas.iter().map(|b| offset(*b)).collect();
    let z_off: Vec<usize> = slacks.iter().map(|b| offset(*b)).collect();

    let basis = hermitian_basis(n);
    let mut lmis = Vec::new();
    let mut linear = Vec::new();

    for k in 0..k_users {
        let t = t_prev[k];
        let h = &channels.estimates[k];
        let r = channels.radii[k];
        let sigma2 = config.noise_powers[k];
        let weight = |l: usize| if l == k { 1.0 } else { -t };
        if r > 0.0 {
            let size = n + 1;
            let mut constant = CMatrix::zeros(size, size);
            constant[(n, n)] = C64::new(-t * sigma2, 0.0);
            let mut terms = Vec::with_capacity(k_users * basis.len() + 2);
            let y_basis: Vec<CMatrix> = basis.iter().map(|b| build_y(b, h)).collect::<Result<_>>()?;
            for l in 0..k_users {
                for (j, y) in y_basis.iter().enumerate() {
                    terms.push((q_off[l] + j, y.scale(weight(l))));
                }
            }
            let mut lambda_block = CMatrix::identity(size, size);
            lambda_block[(n, n)] = C64::new(-r * r, 0.0);
            terms.push((l_off[k], lambda_block));
            terms.push((z_off[k], CMatrix::identity(size, size).scale(-1.0)));
            lmis.push(HermitianLmi { name: format!("robust-sinr-{k}"), constant, terms });
        } else {
            let mut terms = Vec::with_capacity(k_users * basis.len() + 1);
            for l in 0..k_users {
                for (j, b) in basis.iter().enumerate() {
                    let v = weight(l) * quad_form(b, h);
                    terms.push((q_off[l] + j, CMatrix::from_element(1, 1, C64::new(v, 0.0))));
                }
            }
            terms.push((z_off[k], CMatrix::from_element(1, 1, C64::new(-1.0, 0.0))));
            lmis.push(HermitianLmi {
                name: format!("nominal-sinr-{k}"),
                constant: CMatrix::from_element(1, 1, C64::new(-t * sigma2, 0.0)),
                terms,
            });
            linear.push(LinearConstraint {
                name: format!("lambda{k}-unused"),
                coeffs: vec![(l_off[k], 1.0)],
                constant: 0.0,
                sense: LinearSense::Zero,
            });
        }
    }

    for k in 0..k_users {
        let terms = basis.iter().enumerate().map(|(j, b)| (q_off[k] + j, b.clone())).collect();
        lmis.push(HermitianLmi { name: format!("psd-Q{k}"), constant: CMatrix::zeros(n, n), terms });
    }

    // Only the n diagonal parameters of each Q contribute to its trace.
    let trace_coeffs = q_off.iter().flat_map(|o| (0..n).map(move |i| (o + i, -1.0))).collect();
    linear.push(LinearConstraint {
        name: "power".into(),
        coeffs: trace_coeffs,
        constant: config.power_budget,
        sense: LinearSense::NonNegative,
    });
    for k in 0..k_users {
        if channels.radii[k] > 0.0 {
            linear.push(LinearConstraint {
                name: format!("lambda{k}>=0"),
                coeffs: vec![(l_off[k], 1.0)],
                constant: 0.0,
                sense: LinearSense::NonNegative,
            });
        }
        linear.push(LinearConstraint {
            name: format!("z{k}>=0"),
            coeffs: vec![(z_off[k], 1.0)],
            constant: 0.0,
            sense: LinearSense::NonNegative,
        });
    }

    problem.objective = z_off.iter().map(|o| (*o, 1.0)).collect();
    problem.lmi_constraints = lmis;
    problem.linear_constraints = linear;
    Ok((problem, SubproblemVars { covariances, lambdas, slacks }))
}
