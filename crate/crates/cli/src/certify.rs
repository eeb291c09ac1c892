//! Checks of a stored design.

use std::fmt::Write as _;

use serde::Serialize;
use wcum_core::eval::{worst_case_report, WorstCaseReport};
use wcum_core::linalg::min_eigenvalue;
use wcum_core::model::{POWER_TOL, PSD_TOL};
use wcum_core::wcum::{Check, Wcum};

use crate::error::Result;
use crate::records::DesignFile;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NamedCheck {
    pub name: String,
    #[serde(flatten)]
    pub check: Check,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertifyReport {
    pub checks: Vec<NamedCheck>,
    pub worst_case: WorstCaseReport,
}

impl CertifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.check.passed)
    }

    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|c| !c.check.passed).count()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let verdict = if c.check.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(out, "{verdict} {:<13} margin {:>11.3e}  {}", c.name, c.check.margin, c.check.detail);
        }
        for (k, u) in self.worst_case.per_user.iter().enumerate() {
            let _ = writeln!(
                out,
                "user {k}: worst-case SINR {:.6e}  rate {:.6}  sampled rate {:.6} ({} samples)",
                u.exact_worst_sinr, u.exact_worst_rate, u.mc_worst_rate, u.mc_samples
            );
        }
        let _ = writeln!(out, "worst-case utility {:.6}  sampled {:.6}", self.worst_case.utility_exact, self.worst_case.utility_mc);
        out
    }
}

fn check(name: &str, margin: f64, detail: String) -> NamedCheck {
    NamedCheck { name: name.into(), check: Check { passed: margin >= 0.0, margin, detail } }
}

/// Power and PSD checks of the covariances, the limit-point certificate
/// when the design stores one, and the worst-case rates.
pub fn certify_design(design: &DesignFile, mc_samples: usize, seed: u64) -> Result<CertifyReport> {
    let system = &design.system;
    let power = design.covs.total_power();
    let mut checks = vec![check(
        "power",
        system.power_budget + POWER_TOL - power,
        format!("total trace {power:.9} of budget {:.9}", system.power_budget),
    )];
    let min_eig = design.covs.matrices.iter().map(min_eigenvalue).fold(f64::INFINITY, f64::min);
    checks.push(check("psd", min_eig + PSD_TOL, format!("min eigenvalue {min_eig:.3e}")));
    if let Some(state) = design.state() {
        let cert = Wcum::default().certify_limit(&state, &design.channels, system)?;
        for (name, c) in [("feasibility", cert.feasibility), ("zero-slack", cert.zero_slack), ("pareto-probe", cert.pareto_probe)] {
            checks.push(NamedCheck { name: name.into(), check: c });
        }
    }
    let worst_case = worst_case_report(&design.covs, &design.channels, system, mc_samples, seed)?;
    Ok(CertifyReport { checks, worst_case })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::SCHEMA_VERSION;
    use wcum_core::model::sample_channels;
    use wcum_core::{ChannelSet, CovarianceSet, SystemConfig};

    fn design(covs: CovarianceSet) -> DesignFile {
        let system = SystemConfig::sum_rate(2, 2, 10.0, 0.01).unwrap();
        let channels = ChannelSet::with_radius(sample_channels(&system, 3), 0.1).unwrap();
        DesignFile { schema_version: SCHEMA_VERSION, algorithm: None, trial: None, system, channels, covs, limit: None }
    }

    #[test]
    fn zero_design_is_feasible_with_zero_rates() {
        let r = certify_design(&design(CovarianceSet::zeros(2, 2)), 100, 0).unwrap();
        assert!(r.passed());
        assert!(r.worst_case.per_user.iter().all(|u| u.exact_worst_rate == 0.0 && u.mc_worst_rate == 0.0));
    }

    #[test]
    fn over_budget_design_fails_power() {
        let half = CovarianceSet::new(vec![wcum_core::linalg::CMatrix::identity(2, 2) * wcum_core::linalg::C64::new(2.5, 0.0); 2]);
        assert!(certify_design(&design(half.clone()), 100, 0).unwrap().passed());
        let r = certify_design(&design(half.scaled(1.5)), 100, 0).unwrap();
        assert!(!r.passed());
        assert!(!r.checks[0].check.passed);
        assert!(r.render().contains("FAIL power"));
    }
}
