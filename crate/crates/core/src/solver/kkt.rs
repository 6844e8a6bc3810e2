//! Solver-independent optimality check in the original variable space.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{Solution, SolverSettings};
use crate::model::ConicProblem;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub equality_residual_inf_norm: f64,
    /// Smallest eigenvalue over all PSD blocks evaluated at the primal values.
    pub min_block_eigenvalue: f64,
    /// Smallest eigenvalue over all dual blocks; `None` without duals.
    pub min_dual_eigenvalue: Option<f64>,
    /// `Σ_b ⟨Λ_b, S_b(y)⟩`.
    pub complementarity: f64,
    /// `|complementarity| / max(1, |objective|)`.
    pub relative_gap: f64,
    pub objective: f64,
}

impl KktReport {
    pub fn passes(&self, settings: &SolverSettings) -> bool {
        self.equality_residual_inf_norm <= settings.feas_tol
            && self.min_block_eigenvalue >= -settings.feas_tol
            && self.relative_gap <= settings.gap_tol
            && self.min_dual_eigenvalue.is_none_or(|e| e >= -settings.feas_tol)
    }
}

fn min_eigenvalue(m: DMatrix<f64>) -> f64 {
    match m.nrows() {
        0 => f64::INFINITY,
        1 => m[(0, 0)],
        _ => SymmetricEigen::new(m).eigenvalues.min(),
    }
}

/// Recomputes residuals, eigenvalue floors and complementarity from the
/// problem data and the solution's primal values and block duals.
pub fn check_kkt(problem: &ConicProblem, solution: &Solution) -> KktReport {
    check_point(problem, &solution.primal_values, &solution.block_duals)
}

/// As [`check_kkt`] for a bare point; pass no duals to skip the dual checks.
pub fn check_point(problem: &ConicProblem, y: &[f64], duals: &[DMatrix<f64>]) -> KktReport {
    let equality_residual_inf_norm = problem
        .equality_residuals(y)
        .into_iter()
        .fold(0.0f64, |m, r| m.max(r.abs()));
    let mut min_block_eigenvalue = f64::INFINITY;
    let mut complementarity = 0.0;
    let have_duals = !duals.is_empty() && duals.len() == problem.psd_blocks.len();
    let mut min_dual = f64::INFINITY;
    for (b, block) in problem.psd_blocks.iter().enumerate() {
        let s = block.eval(y);
        if have_duals {
            let l = &duals[b];
            complementarity += s.iter().zip(l.iter()).map(|(a, b)| a * b).sum::<f64>();
            min_dual = min_dual.min(min_eigenvalue(l.clone()));
        }
        min_block_eigenvalue = min_block_eigenvalue.min(min_eigenvalue(s));
    }
    if problem.psd_blocks.is_empty() {
        min_block_eigenvalue = 0.0;
        min_dual = 0.0;
    }
    let objective = problem.objective_value(y);
    KktReport {
        equality_residual_inf_norm,
        min_block_eigenvalue,
        min_dual_eigenvalue: have_duals.then_some(min_dual),
        complementarity,
        relative_gap: if have_duals {
            complementarity.abs() / objective.abs().max(1.0)
        } else {
            0.0
        },
        objective,
    }
}
