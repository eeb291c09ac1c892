//! Debug dump of a lowered problem in SDPA sparse format.
//!
//! SDPA solves `minimize cᵀx s.t. Σ F_i x_i − F_0 ⪰ 0` over a block-diagonal
//! structure. Linear rows become one diagonal block (negative size in the
//! block-structure line); each equality is written as a pair of opposite
//! inequalities. Every PSD cone becomes one dense block. Entries are listed
//! as `matrix block row col value` triplets (1-based, upper triangle).

use std::fmt::Write as _;

use super::{lower_to_real, RealCone, SdpProblem};
use crate::error::Result;

pub fn write_sdpa(problem: &SdpProblem) -> Result<String> {
    let form = lower_to_real(problem)?;
    let mut out = String::new();
    let _ = writeln!(out, "* SDPA sparse format");
    let _ = writeln!(out, "* variables: {}", form.n_vars);
    for block in &problem.variables {
        let _ = writeln!(out, "*   {} {:?} at offset {}", block.name, block.kind, block.offset);
    }

    // Linear rows as `g_0 + gᵀx ≥ 0`, with equalities doubled.
    let mut linear_rows: Vec<(f64, Vec<(usize, f64)>)> = Vec::new();
    let mut row = 0;
    for cone in &form.cones {
        match *cone {
            RealCone::Zero(m) | RealCone::NonNegative(m) => {
                for r in row..row + m {
                    let coeffs: Vec<(usize, f64)> =
                        form.a_triplets.iter().filter(|(rr, _, _)| *rr == r).map(|(_, c, v)| (*c, -v)).collect();
                    linear_rows.push((form.b[r], coeffs.clone()));
                    if matches!(cone, RealCone::Zero(_)) {
                        linear_rows.push((-form.b[r], coeffs.iter().map(|(c, v)| (*c, -v)).collect()));
                    }
                }
                row += m;
            }
            RealCone::Psd(_) => {}
        }
    }

    let mut sizes: Vec<i64> = Vec::new();
    if !linear_rows.is_empty() {
        sizes.push(-(linear_rows.len() as i64));
    }
    sizes.extend(form.psd_blocks.iter().map(|b| b.size as i64));
    let _ = writeln!(out, "{}", form.n_vars);
    let _ = writeln!(out, "{}", sizes.len());
    let _ = writeln!(out, "{}", sizes.iter().map(i64::to_string).collect::<Vec<_>>().join(" "));
    let _ = writeln!(out, "{}", form.cost.iter().map(|c| format!("{c:.17e}")).collect::<Vec<_>>().join(" "));

    let mut block_no = 1;
    if !linear_rows.is_empty() {
        for (i, (g0, coeffs)) in linear_rows.iter().enumerate() {
            if *g0 != 0.0 {
                let _ = writeln!(out, "0 {block_no} {} {} {:.17e}", i + 1, i + 1, -g0);
            }
            for (var, v) in coeffs {
                let _ = writeln!(out, "{} {block_no} {} {} {:.17e}", var + 1, i + 1, i + 1, v);
            }
        }
        block_no += 1;
    }
    for block in &form.psd_blocks {
        for j in 0..block.size {
            for i in 0..=j {
                let v = block.constant[(i, j)];
                if v != 0.0 {
                    let _ = writeln!(out, "0 {block_no} {} {} {:.17e}", i + 1, j + 1, -v);
                }
            }
        }
        for (var, m) in &block.terms {
            for j in 0..block.size {
                for i in 0..=j {
                    let v = m[(i, j)];
                    if v != 0.0 {
                        let _ = writeln!(out, "{} {block_no} {} {} {:.17e}", var + 1, i + 1, j + 1, v);
                    }
                }
            }
        }
        block_no += 1;
    }
    Ok(out)
}
