use std::panic::{self, AssertUnwindSafe};

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, NonnegativeConeT, PSDTriangleConeT, SolverStatus,
    SupportedConeT, ZeroConeT,
};

use super::{lower_to_real, ConicBackend, RealCone, RealConicForm, SdpProblem, SdpSolution, SolveStatus, SolverSettings, SolverStats};
use crate::error::{Error, Result};

/// Interior-point backend built on Clarabel's real PSD triangle cones.
#[derive(Debug, Clone, Default)]
pub struct ClarabelBackend {
    pub settings: SolverSettings,
}

impl ClarabelBackend {
    pub fn new(settings: SolverSettings) -> Self {
        Self { settings }
    }
}

impl ConicBackend for ClarabelBackend {
    fn name(&self) -> &str {
        "clarabel"
    }

    /// Solves with the configured regularization, retrying with nearby
    /// values until one attempt is optimal with a recomputed primal violation
    /// within `retry_tol`. Otherwise the best attempt is returned.
    fn solve(&self, problem: &SdpProblem) -> Result<SdpSolution> {
        let mut best: Option<SdpSolution> = None;
        let mut last_err = None;
        for attempt in 0..self.attempts() {
            let sol = match self.solve_attempt(problem, attempt) {
                Ok(sol) => sol,
                Err(e @ Error::Solver(_)) => {
                    last_err = Some(e);
                    continue;
                }
                Err(e) => return Err(e),
            };
            if sol.status == SolveStatus::Optimal && sol.stats.primal_violation <= self.settings.retry_tol {
                return Ok(sol);
            }
            if best.as_ref().is_none_or(|b| rank(&sol) < rank(b)) {
                best = Some(sol);
            }
        }
        best.ok_or_else(|| last_err.expect("every attempt failed"))
    }

    fn attempts(&self) -> usize {
        REGULARIZATION_LADDER.len()
    }

    /// One solve with the `attempt`-th rung of the regularization ladder.
    fn solve_attempt(&self, problem: &SdpProblem, attempt: usize) -> Result<SdpSolution> {
        let Some(factor) = REGULARIZATION_LADDER.get(attempt) else {
            return Err(Error::InvalidArgument(format!("attempt {attempt} out of range")));
        };
        let form = lower_to_real(problem)?;
        let regularization = self.settings.static_regularization * factor;
        // Clarabel panics when its dense eigensolver fails on a blown-up iterate.
        panic::catch_unwind(AssertUnwindSafe(|| self.solve_once(problem, &form, regularization)))
            .unwrap_or_else(|_| Err(Error::Solver(format!("clarabel panicked with regularization {regularization:.1e}"))))
    }
}

/// Multipliers on the base regularization tried in order.
const REGULARIZATION_LADDER: [f64; 9] = [1.0, 3.0, 0.3, 10.0, 0.1, 30.0, 100.0, 1000.0, 0.01];

/// Ordering key for attempts: usable before unusable, then by violation.
fn rank(sol: &SdpSolution) -> (u8, f64) {
    let class = match sol.status {
        SolveStatus::Optimal => 0,
        SolveStatus::NearOptimal | SolveStatus::Stalled => 1,
        _ => 2,
    };
    let violation = if sol.stats.primal_violation.is_nan() { f64::INFINITY } else { sol.stats.primal_violation };
    (class, violation)
}

impl ClarabelBackend {
    fn solve_once(&self, problem: &SdpProblem, form: &RealConicForm, regularization: f64) -> Result<SdpSolution> {
        let m = form.b.len();
        let n = form.n_vars;
        let (rows, (cols, vals)): (Vec<usize>, (Vec<usize>, Vec<f64>)) =
            form.a_triplets.iter().map(|(r, c, v)| (*r, (*c, *v))).unzip();
        let a = CscMatrix::new_from_triplets(m, n, rows, cols, vals);
        let p = CscMatrix::zeros((n, n));
        let cones: Vec<SupportedConeT<f64>> = form
            .cones
            .iter()
            .map(|c| match *c {
                RealCone::Zero(k) => ZeroConeT(k),
                RealCone::NonNegative(k) => NonnegativeConeT(k),
                RealCone::Psd(k) => PSDTriangleConeT(k),
            })
            .collect();
        let settings = DefaultSettingsBuilder::default()
            .tol_gap_abs(self.settings.tol_gap_abs)
            .tol_gap_rel(self.settings.tol_gap_rel)
            .tol_feas(self.settings.tol_feas)
            .max_iter(self.settings.max_iter)
            .verbose(false)
            .static_regularization_constant(regularization)
            .build()
            .map_err(|e| Error::Solver(format!("bad solver settings: {e}")))?;
        let mut solver = DefaultSolver::new(&p, &form.cost, &a, &form.b, &cones, settings)
            .map_err(|e| Error::Solver(format!("could not set up problem: {e:?}")))?;
        solver.solve();

        let x = solver.solution.x.clone();
        let finite = x.iter().all(|v| v.is_finite());
        let stats = SolverStats {
            iterations: solver.info.iterations,
            primal_residual: solver.info.res_primal,
            dual_residual: solver.info.res_dual,
            duality_gap: solver.info.gap_abs,
            primal_violation: if finite { problem.primal_violation(&x) } else { f64::INFINITY },
        };
        let tol = self.settings.stall_tol;
        let stalled_but_close =
            finite && stats.primal_violation <= tol && stats.primal_residual <= tol && stats.dual_residual <= tol;
        let status = match solver.solution.status {
            SolverStatus::Solved => SolveStatus::Optimal,
            SolverStatus::AlmostSolved => SolveStatus::NearOptimal,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
            SolverStatus::InsufficientProgress | SolverStatus::NumericalError | SolverStatus::MaxIterations
                if stalled_but_close =>
            {
                SolveStatus::Stalled
            }
            _ => SolveStatus::NumericalFailure,
        };
        let objective_value = problem.objective_value(&x);
        Ok(SdpSolution { status, x, objective_value, stats })
    }
}
