//! Semidefinite programs over complex Hermitian LMIs and their lowering to
//! real symmetric conic form.
//!
//! Problems are stated as
//!
//! ```text
//! maximize    cᵀx
//! subject to  G_0 + Σ x_i G_i ⪰ 0      (Hermitian G, one per LMI)
//!             a_jᵀx + b_j ≥ 0 (or = 0)
//! ```
//!
//! over a real variable vector `x`, which may hold Hermitian matrix
//! variables in parameterized form (see [`hermitian_basis`]). Backends that
//! only support real PSD cones receive the problem through
//! [`RealConicForm`], where every complex LMI has been passed through
//! [`embed_hermitian`].

mod clarabel_backend;
mod sdpa;
mod subproblem;

pub use clarabel_backend::ClarabelBackend;
pub use sdpa::write_sdpa;
pub use subproblem::{build_subproblem_q, SubproblemVars};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{hermitian_defect, min_eigenvalue, CMatrix, C64};

/// Real symmetric `2n×2n` embedding `[[Re H, −Im H], [Im H, Re H]]`.
///
/// The embedding is PSD iff `h` is, and each eigenvalue of `h` appears twice.
pub fn embed_hermitian(h: &CMatrix) -> nalgebra::DMatrix<f64> {
    let n = h.nrows();
    let mut out = nalgebra::DMatrix::<f64>::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let z = h[(i, j)];
            out[(i, j)] = z.re;
            out[(i + n, j + n)] = z.re;
            out[(i, j + n)] = -z.im;
            out[(i + n, j)] = z.im;
        }
    }
    out
}

/// Number of real parameters of an `n×n` Hermitian matrix.
pub fn hermitian_dim(n: usize) -> usize {
    n * n
}

/// Basis of the real vector space of `n×n` Hermitian matrices, in parameter
/// order: the `n` diagonal units, then for every `i < j` (row-major) the
/// real-part generator `E_ij + E_ji` followed by the imaginary-part
/// generator `i(E_ij − E_ji)`.
pub fn hermitian_basis(n: usize) -> Vec<CMatrix> {
    let mut basis = Vec::with_capacity(n * n);
    for i in 0..n {
        let mut e = CMatrix::zeros(n, n);
        e[(i, i)] = C64::new(1.0, 0.0);
        basis.push(e);
    }
    for i in 0..n {
        for j in i + 1..n {
            let mut re = CMatrix::zeros(n, n);
            re[(i, j)] = C64::new(1.0, 0.0);
            re[(j, i)] = C64::new(1.0, 0.0);
            basis.push(re);
            let mut im = CMatrix::zeros(n, n);
            im[(i, j)] = C64::new(0.0, 1.0);
            im[(j, i)] = C64::new(0.0, -1.0);
            basis.push(im);
        }
    }
    basis
}

/// Rebuild a Hermitian matrix from its parameters.
pub fn hermitian_from_params(n: usize, params: &[f64]) -> CMatrix {
    let mut m = CMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = C64::new(params[i], 0.0);
    }
    let mut p = n;
    for i in 0..n {
        for j in i + 1..n {
            m[(i, j)] = C64::new(params[p], params[p + 1]);
            m[(j, i)] = C64::new(params[p], -params[p + 1]);
            p += 2;
        }
    }
    m
}

/// Inverse of [`hermitian_from_params`] (uses the upper triangle).
pub fn hermitian_to_params(m: &CMatrix) -> Vec<f64> {
    let n = m.nrows();
    let mut params: Vec<f64> = (0..n).map(|i| m[(i, i)].re).collect();
    for i in 0..n {
        for j in i + 1..n {
            params.push(m[(i, j)].re);
            params.push(m[(i, j)].im);
        }
    }
    params
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarKind {
    Hermitian(usize),
    Scalar,
}

/// A named group of entries of the variable vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarBlock {
    pub name: String,
    pub kind: VarKind,
    pub offset: usize,
}

impl VarBlock {
    pub fn len(&self) -> usize {
        match self.kind {
            VarKind::Hermitian(n) => hermitian_dim(n),
            VarKind::Scalar => 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `constant + Σ x_var · coeff ⪰ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianLmi {
    pub name: String,
    pub constant: CMatrix,
    pub terms: Vec<(usize, CMatrix)>,
}

impl HermitianLmi {
    pub fn size(&self) -> usize {
        self.constant.nrows()
    }

    pub fn evaluate(&self, x: &[f64]) -> CMatrix {
        self.terms.iter().fold(self.constant.clone(), |acc, (i, c)| acc + c.scale(x[*i]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinearSense {
    /// `aᵀx + b ≥ 0`
    NonNegative,
    /// `aᵀx + b = 0`
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub name: String,
    pub coeffs: Vec<(usize, f64)>,
    pub constant: f64,
    pub sense: LinearSense,
}

impl LinearConstraint {
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.constant + self.coeffs.iter().map(|(i, a)| a * x[*i]).sum::<f64>()
    }
}

/// A linear objective to maximize over Hermitian LMIs and linear constraints.
/// Immutable once handed to a backend.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SdpProblem {
    pub variables: Vec<VarBlock>,
    /// Maximized.
    pub objective: Vec<(usize, f64)>,
    pub lmi_constraints: Vec<HermitianLmi>,
    pub linear_constraints: Vec<LinearConstraint>,
}

impl SdpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_vars(&self) -> usize {
        self.variables.last().map_or(0, |b| b.offset + b.len())
    }

    /// Adds a variable block and returns its index in `variables`.
    pub fn add_variable(&mut self, name: impl Into<String>, kind: VarKind) -> usize {
        let offset = self.n_vars();
        self.variables.push(VarBlock { name: name.into(), kind, offset });
        self.variables.len() - 1
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().map(|(i, c)| c * x[*i]).sum()
    }

    /// Coefficient matrices must be Hermitian, sizes consistent, and every
    /// referenced variable index in range.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_vars();
        for lmi in &self.lmi_constraints {
            let size = lmi.size();
            if lmi.constant.ncols() != size || hermitian_defect(&lmi.constant) > 1e-12 * (1.0 + lmi.constant.norm()) {
                return invalid(format!("LMI {} has a non-Hermitian constant", lmi.name));
            }
            for (i, c) in &lmi.terms {
                if *i >= n {
                    return invalid(format!("LMI {} references variable {i} of {n}", lmi.name));
                }
                if c.nrows() != size || c.ncols() != size {
                    return invalid(format!("LMI {} mixes coefficient sizes", lmi.name));
                }
                if hermitian_defect(c) > 1e-12 * (1.0 + c.norm()) {
                    return invalid(format!("LMI {} has a non-Hermitian coefficient", lmi.name));
                }
            }
        }
        for lin in &self.linear_constraints {
            if lin.coeffs.iter().any(|(i, _)| *i >= n) {
                return invalid(format!("linear constraint {} references an unknown variable", lin.name));
            }
        }
        if self.objective.iter().any(|(i, _)| *i >= n) {
            return invalid("objective references an unknown variable");
        }
        Ok(())
    }

    /// Largest constraint violation at `x`: the most negative LMI eigenvalue,
    /// linear shortfall, or equality mismatch (0 when feasible).
    pub fn primal_violation(&self, x: &[f64]) -> f64 {
        let lmi = self
            .lmi_constraints
            .iter()
            .map(|l| (-min_eigenvalue(&l.evaluate(x))).max(0.0))
            .fold(0.0, f64::max);
        let lin = self
            .linear_constraints
            .iter()
            .map(|l| {
                let v = l.evaluate(x);
                match l.sense {
                    LinearSense::NonNegative => (-v).max(0.0),
                    LinearSense::Zero => v.abs(),
                }
            })
            .fold(0.0, f64::max);
        lmi.max(lin)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    NearOptimal,
    /// The solver stopped making progress at a point with small residuals.
    Stalled,
    Infeasible,
    NumericalFailure,
}

impl SolveStatus {
    pub fn is_usable(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::NearOptimal | SolveStatus::Stalled)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub iterations: u32,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub duality_gap: f64,
    /// Recomputed from the returned point in the original complex form.
    pub primal_violation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub objective_value: f64,
    pub stats: SolverStats,
}

impl SdpSolution {
    pub fn scalar(&self, block: &VarBlock) -> f64 {
        self.x[block.offset]
    }

    pub fn hermitian(&self, block: &VarBlock) -> CMatrix {
        match block.kind {
            VarKind::Hermitian(n) => hermitian_from_params(n, &self.x[block.offset..block.offset + block.len()]),
            VarKind::Scalar => CMatrix::from_element(1, 1, C64::new(self.x[block.offset], 0.0)),
        }
    }
}

/// Tolerances handed to the backend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub tol_gap_abs: f64,
    pub tol_gap_rel: f64,
    pub tol_feas: f64,
    pub max_iter: u32,
    /// A stalled solve is still returned as usable when its residuals and
    /// recomputed primal violation are all below this.
    pub stall_tol: f64,
    /// Static regularization of the KKT system. Near the Pareto boundary the
    /// covariance subproblem is degenerate and the solver default stalls.
    pub static_regularization: f64,
    /// Primal violation above which a solve is retried with another
    /// regularization.
    pub retry_tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { tol_gap_abs: 1e-8, tol_gap_rel: 1e-8, tol_feas: 1e-8, max_iter: 200, stall_tol: 1e-4, static_regularization: 1e-7, retry_tol: 1e-7 }
    }
}

/// Anything that can solve an [`SdpProblem`].
pub trait ConicBackend: Send + Sync {
    fn name(&self) -> &str;
    fn solve(&self, problem: &SdpProblem) -> Result<SdpSolution>;

    /// Number of solver configurations [`Self::solve_attempt`] can try.
    fn attempts(&self) -> usize {
        1
    }

    /// Solves with the `attempt`-th configuration, `0..self.attempts()`.
    fn solve_attempt(&self, problem: &SdpProblem, attempt: usize) -> Result<SdpSolution> {
        let _ = attempt;
        self.solve(problem)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RealCone {
    Zero(usize),
    NonNegative(usize),
    /// Real symmetric PSD cone of the given side, stored as the scaled
    /// upper triangle (column-major, off-diagonals times √2).
    Psd(usize),
}

impl RealCone {
    pub fn rows(&self) -> usize {
        match *self {
            RealCone::Zero(m) | RealCone::NonNegative(m) => m,
            RealCone::Psd(n) => n * (n + 1) / 2,
        }
    }
}

/// `minimize cᵀx  s.t.  b − A x ∈ K` with `K` a product of [`RealCone`]s.
#[derive(Debug, Clone, PartialEq)]
pub struct RealConicForm {
    pub n_vars: usize,
    pub cost: Vec<f64>,
    /// `(row, col, value)` triplets of `A`.
    pub a_triplets: Vec<(usize, usize, f64)>,
    pub b: Vec<f64>,
    pub cones: Vec<RealCone>,
    /// For PSD cones: the full real symmetric matrices `S_0`, `S_i` with
    /// `S(x) = S_0 + Σ x_i S_i`, kept for text dumps.
    pub psd_blocks: Vec<RealPsdBlock>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealPsdBlock {
    pub size: usize,
    pub constant: nalgebra::DMatrix<f64>,
    pub terms: Vec<(usize, nalgebra::DMatrix<f64>)>,
}

fn svec_push(m: &nalgebra::DMatrix<f64>, out: &mut Vec<(usize, f64)>) {
    let n = m.nrows();
    let mut idx = 0;
    for j in 0..n {
        for i in 0..=j {
            let v = if i == j { m[(i, j)] } else { std::f64::consts::SQRT_2 * m[(i, j)] };
            if v != 0.0 {
                out.push((idx, v));
            }
            idx += 1;
        }
    }
}

/// Lower complex LMIs to real PSD cones via [`embed_hermitian`] and the
/// maximization to a minimization. Equalities come first, then
/// inequalities, then PSD cones in LMI order.
pub fn lower_to_real(problem: &SdpProblem) -> Result<RealConicForm> {
    problem.validate()?;
    let n_vars = problem.n_vars();
    let mut cost = vec![0.0; n_vars];
    for (i, c) in &problem.objective {
        cost[*i] -= c;
    }
    let mut a = Vec::new();
    let mut b = Vec::new();
    let mut cones = Vec::new();
    let mut row = 0;
    for sense in [LinearSense::Zero, LinearSense::NonNegative] {
        let rows: Vec<&LinearConstraint> = problem.linear_constraints.iter().filter(|l| l.sense == sense).collect();
        if rows.is_empty() {
            continue;
        }
        for lin in &rows {
            for (i, coeff) in &lin.coeffs {
                a.push((row, *i, -coeff));
            }
            b.push(lin.constant);
            row += 1;
        }
        cones.push(match sense {
            LinearSense::Zero => RealCone::Zero(rows.len()),
            LinearSense::NonNegative => RealCone::NonNegative(rows.len()),
        });
    }
    let mut psd_blocks = Vec::new();
    for lmi in &problem.lmi_constraints {
        let constant = embed_hermitian(&lmi.constant);
        let size = constant.nrows();
        let mut entries = Vec::new();
        svec_push(&constant, &mut entries);
        let base = b.len();
        b.extend(std::iter::repeat_n(0.0, size * (size + 1) / 2));
        for (idx, v) in entries {
            b[base + idx] = v;
        }
        let mut terms = Vec::with_capacity(lmi.terms.len());
        for (var, coeff) in &lmi.terms {
            let real = embed_hermitian(coeff);
            let mut entries = Vec::new();
            svec_push(&real, &mut entries);
            for (idx, v) in entries {
                a.push((base + idx, *var, -v));
            }
            terms.push((*var, real));
        }
        cones.push(RealCone::Psd(size));
        psd_blocks.push(RealPsdBlock { size, constant, terms });
    }
    Ok(RealConicForm { n_vars, cost, a_triplets: a, b, cones, psd_blocks })
}
