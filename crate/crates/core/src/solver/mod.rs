//! Bundled conic solver for [`ConicProblem`] instances.
//!
//! Equalities are eliminated and degenerate faces of the PSD blocks are
//! removed in a presolve pass; the remaining problem
//! `min cᵀz  s.t.  C_b + Σ z_k G_bk ⪰ 0` is solved by an infeasible
//! primal-dual path-following method with Nesterov-Todd scaling and a
//! Mehrotra predictor-corrector. Results are mapped back to the original
//! variables and re-checked there before a status is assigned.

mod ipm;
mod kkt;
pub(crate) mod ldl;
mod presolve;

use std::fmt;
use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::ConicProblem;

pub use kkt::{check_kkt, check_point, KktReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Relative duality gap `|p − d| / max(1, |p|, |d|)`.
    pub gap_tol: f64,
    /// Absolute bound on equality residuals and negative block eigenvalues.
    pub feas_tol: f64,
    pub max_iters: usize,
    /// 0 is silent; 1 logs one line per iteration to stderr from [`solve`].
    pub verbosity: u8,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            gap_tol: 1e-7,
            feas_tol: 1e-7,
            max_iters: 200,
            verbosity: 0,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.gap_tol > 0.0 && self.feas_tol > 0.0) {
            return invalid("solver tolerances must be positive");
        }
        if self.max_iters == 0 {
            return invalid("max_iters must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Optimal,
    MaxIters,
    InfeasibleDetected,
    NumericalFailure,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Optimal => "optimal",
            Status::MaxIters => "max-iters",
            Status::InfeasibleDetected => "infeasible-detected",
            Status::NumericalFailure => "numerical-failure",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub status: Status,
    pub primal_values: Vec<f64>,
    pub objective_value: f64,
    pub dual_objective: f64,
    pub duality_gap: f64,
    pub equality_residual_inf_norm: f64,
    pub min_block_eigenvalue: f64,
    pub iterations: usize,
    /// Dual matrix per PSD block of the original problem.
    pub block_duals: Vec<DMatrix<f64>>,
    pub presolve: PresolveInfo,
    pub message: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PresolveInfo {
    pub original_vars: usize,
    pub reduced_vars: usize,
    pub dropped_equalities: usize,
    pub facial_reductions: usize,
    pub dropped_blocks: usize,
}

/// Serializable digest of a [`Solution`] without the variable values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionSummary {
    pub status: Status,
    pub objective_value: f64,
    pub dual_objective: f64,
    pub duality_gap: f64,
    pub equality_residual_inf_norm: f64,
    pub min_block_eigenvalue: f64,
    pub iterations: usize,
    pub presolve: PresolveInfo,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl Solution {
    pub fn summary(&self) -> SolutionSummary {
        SolutionSummary {
            status: self.status,
            objective_value: self.objective_value,
            dual_objective: self.dual_objective,
            duality_gap: self.duality_gap,
            equality_residual_inf_norm: self.equality_residual_inf_norm,
            min_block_eigenvalue: self.min_block_eigenvalue,
            iterations: self.iterations,
            presolve: self.presolve,
            message: self.message.clone(),
        }
    }
}

/// Solves `problem`; logs to stderr when `settings.verbosity > 0`.
pub fn solve(problem: &ConicProblem, settings: &SolverSettings) -> Result<Solution> {
    if settings.verbosity > 0 {
        let mut err = std::io::stderr();
        solve_inner(problem, settings, Some(&mut err))
    } else {
        solve_inner(problem, settings, None)
    }
}

/// Solves `problem`, writing one line per iteration to `log`:
///
/// `iter <k> pobj <p> dobj <d> gap <rel> pres <p> dres <d> mu <mu> step <ap> <ad>`
pub fn solve_with_log(problem: &ConicProblem, settings: &SolverSettings, log: &mut dyn Write) -> Result<Solution> {
    solve_inner(problem, settings, Some(log))
}

fn solve_inner(problem: &ConicProblem, settings: &SolverSettings, mut log: Option<&mut (dyn Write + '_)>) -> Result<Solution> {
    problem.validate()?;
    settings.validate()?;

    let pre = match presolve::presolve(problem) {
        Ok(p) => p,
        Err(presolve::Infeasible(msg)) => {
            if let Some(w) = log.as_deref_mut() {
                let _ = writeln!(w, "presolve: infeasible: {msg}");
            }
            return Ok(Solution {
                status: Status::InfeasibleDetected,
                primal_values: vec![0.0; problem.num_vars],
                objective_value: f64::NAN,
                dual_objective: f64::NAN,
                duality_gap: f64::INFINITY,
                equality_residual_inf_norm: f64::INFINITY,
                min_block_eigenvalue: f64::NEG_INFINITY,
                iterations: 0,
                block_duals: problem
                    .psd_blocks
                    .iter()
                    .map(|b| DMatrix::zeros(b.dim, b.dim))
                    .collect(),
                presolve: PresolveInfo {
                    original_vars: problem.num_vars,
                    ..Default::default()
                },
                message: Some(msg),
            });
        }
    };
    let info = PresolveInfo {
        original_vars: problem.num_vars,
        reduced_vars: pre.n,
        dropped_equalities: pre.dropped_rows(),
        facial_reductions: pre.facial_reductions,
        dropped_blocks: problem.psd_blocks.len() - pre.blocks.len(),
    };
    if let Some(w) = log.as_deref_mut() {
        let _ = writeln!(
            w,
            "presolve vars {} -> {} blocks {} -> {} dropped-equalities {} facial-reductions {}",
            info.original_vars,
            info.reduced_vars,
            problem.psd_blocks.len(),
            pre.blocks.len(),
            info.dropped_equalities,
            info.facial_reductions
        );
        if info.dropped_equalities > 0 {
            let _ = writeln!(w, "warning: {} linearly dependent equalities removed", info.dropped_equalities);
        }
    }

    let out = ipm::run(&pre, settings, log.as_deref_mut());

    let y = pre.reconstruct(&out.z);
    let mut reduced: Vec<Option<&DMatrix<f64>>> = vec![None; problem.psd_blocks.len()];
    for (rb, lam) in pre.blocks.iter().zip(&out.lambdas) {
        reduced[rb.orig] = Some(lam);
    }
    let block_duals: Vec<DMatrix<f64>> = problem
        .psd_blocks
        .iter()
        .enumerate()
        .map(|(b, blk)| pre.expand_dual(b, blk.dim, reduced[b]))
        .collect();

    let mut solution = Solution {
        status: out.status,
        objective_value: problem.objective_value(&y),
        dual_objective: out.dual_objective,
        duality_gap: out.rel_gap,
        equality_residual_inf_norm: 0.0,
        min_block_eigenvalue: 0.0,
        iterations: out.iterations,
        primal_values: y,
        block_duals,
        presolve: info,
        message: out.message,
    };
    let report = check_kkt(problem, &solution);
    solution.equality_residual_inf_norm = report.equality_residual_inf_norm;
    solution.min_block_eigenvalue = report.min_block_eigenvalue;
    solution.duality_gap = solution.duality_gap.max(report.relative_gap);

    let certified = solution.duality_gap <= settings.gap_tol
        && solution.equality_residual_inf_norm <= settings.feas_tol
        && solution.min_block_eigenvalue >= -settings.feas_tol;
    solution.status = match out.status {
        Status::InfeasibleDetected => Status::InfeasibleDetected,
        _ if certified && out.dual_feasible => Status::Optimal,
        Status::Optimal => Status::NumericalFailure,
        other => other,
    };
    if solution.status == Status::NumericalFailure && solution.message.is_none() {
        solution.message = Some(format!(
            "converged in reduced space but original-space check failed (gap {:.2e}, residual {:.2e}, min eig {:.2e})",
            solution.duality_gap, solution.equality_residual_inf_norm, solution.min_block_eigenvalue
        ));
    }
    if let Some(w) = log {
        let _ = writeln!(
            w,
            "status {} iterations {} objective {:.12e} gap {:.3e} residual {:.3e} min-eig {:.3e}",
            solution.status,
            solution.iterations,
            solution.objective_value,
            solution.duality_gap,
            solution.equality_residual_inf_norm,
            solution.min_block_eigenvalue
        );
    }
    Ok(solution)
}
