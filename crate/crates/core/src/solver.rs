//! Unconstrained minimization of the augmented cost over the stacked controls.
//!
//! The main iteration is a regularized Newton scheme: with `K = 𝓡 + ∇²J̃(u_t)`,
//!
//! ```text
//! h_0 = K⁻¹ ∇J̃,   h_m = K⁻¹ (∇J̃ + 𝓡 h_{m-1}),   u_{t+1} = u_t − h_{min(t, cap)}
//! ```
//!
//! `h_m` tends to the Newton step as `m` grows, so later iterations take
//! progressively fuller steps. [`solve_msa_baseline`] is plain fixed-step
//! gradient descent on the same costate gradient, kept for comparison.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{OcpError, Result};
use crate::fbde::{gradient, hessian, RowMode};
use crate::model::{ControlSequence, SystemModel};
use crate::penalty::AugmentedProblem;

/// Rescues allowed per iteration before giving up on the factorization.
const MAX_RESCUES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// `ϱ` in `𝓡 = ϱ I`.
    pub regularizer_scale: f64,
    /// Iteration cap `M`.
    pub max_iters: usize,
    /// Stop once `‖∇J̃‖² < grad_tol`.
    pub grad_tol: f64,
    /// Upper bound on the inner-loop length.
    pub inner_cap: usize,
    /// Factor applied to `𝓡` when `𝓡 + H` fails to factor.
    pub levenberg_growth: f64,
    pub row_mode: RowMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            regularizer_scale: 8.0,
            max_iters: 200,
            grad_tol: 1e-8,
            inner_cap: 10,
            levenberg_growth: 10.0,
            row_mode: RowMode::Sequential,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.regularizer_scale > 0.0 && self.regularizer_scale.is_finite()) {
            return Err(OcpError::invalid("regularizer scale must be positive"));
        }
        if self.max_iters == 0 {
            return Err(OcpError::invalid("max_iters must be positive"));
        }
        if self.grad_tol.is_nan() || self.grad_tol <= 0.0 {
            return Err(OcpError::invalid("grad_tol must be positive"));
        }
        if !(self.levenberg_growth > 1.0 && self.levenberg_growth.is_finite()) {
            return Err(OcpError::invalid("levenberg_growth must exceed 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub final_u: ControlSequence,
    /// Number of control updates performed.
    pub iterations: usize,
    /// `‖∇J̃(u_t)‖²` before each update.
    pub grad_norm_history: Vec<f64>,
    /// `J̃(u_t)` before each update.
    pub cost_history: Vec<f64>,
    pub final_grad_norm_sq: f64,
    pub final_cost: f64,
    pub factorization_rescues: usize,
    pub converged: bool,
}

/// Step `h_{inner}` for a symmetric Hessian `hess`, gradient `grad` and any
/// positive-definite regularizer. Returns `None` when `regularizer + hess`
/// is not positive definite.
pub fn regularized_step(
    grad: &DVector<f64>,
    hess: &DMatrix<f64>,
    regularizer: &DMatrix<f64>,
    inner: usize,
) -> Option<DVector<f64>> {
    let chol: Cholesky<f64, Dyn> = Cholesky::new(regularizer + hess)?;
    let mut h = chol.solve(grad);
    for _ in 0..inner {
        let rhs = grad + regularizer * &h;
        h = chol.solve(&rhs);
    }
    h.iter().all(|v| v.is_finite()).then_some(h)
}

pub fn solve_subproblem<M: SystemModel + ?Sized>(
    ap: &AugmentedProblem<'_, M>,
    u0: &ControlSequence,
    cfg: &SolverConfig,
) -> Result<SolveReport> {
    solve_subproblem_observed(ap, u0, cfg, |_, _| {})
}

/// [`solve_subproblem`] that also hands every iterate `u_t` (including `u_0`
/// and the final one) to `observe`.
pub fn solve_subproblem_observed<M: SystemModel + ?Sized>(
    ap: &AugmentedProblem<'_, M>,
    u0: &ControlSequence,
    cfg: &SolverConfig,
    mut observe: impl FnMut(usize, &ControlSequence),
) -> Result<SolveReport> {
    cfg.validate()?;
    let dim = u0.stacked().len();
    let mut u = u0.clone();
    let mut report = SolveReport {
        final_u: u0.clone(),
        iterations: 0,
        grad_norm_history: Vec::new(),
        cost_history: Vec::new(),
        final_grad_norm_sq: f64::NAN,
        final_cost: f64::NAN,
        factorization_rescues: 0,
        converged: false,
    };

    for t in 0.. {
        observe(t, &u);
        let first = gradient(ap, &u)?;
        let gnorm_sq = first.gradient.norm_squared();
        report.final_grad_norm_sq = gnorm_sq;
        report.final_cost = first.cost;
        if gnorm_sq < cfg.grad_tol {
            report.converged = true;
            break;
        }
        if t == cfg.max_iters {
            break;
        }
        report.grad_norm_history.push(gnorm_sq);
        report.cost_history.push(first.cost);

        let hess = hessian(ap, &u, Some((&first.trajectory, &first.costates)), cfg.row_mode)?;
        // The refinement recursion contracts only when H is positive definite;
        // otherwise it amplifies the step, so only h_0 is taken.
        let inner = if hess.clone().cholesky().is_some() { t.min(cfg.inner_cap) } else { 0 };
        let mut scale = cfg.regularizer_scale;
        let mut rescues = 0;
        let step = loop {
            let reg = DMatrix::from_diagonal_element(dim, dim, scale);
            if let Some(h) = regularized_step(&first.gradient, &hess, &reg, inner) {
                break h;
            }
            if rescues == MAX_RESCUES {
                return Err(OcpError::SolverFailure(format!(
                    "regularized Hessian not positive definite after {MAX_RESCUES} rescues at iteration {t}"
                )));
            }
            rescues += 1;
            report.factorization_rescues += 1;
            scale *= cfg.levenberg_growth;
        };
        *u.stacked_mut() -= step;
        report.iterations += 1;
    }
    report.final_u = u;
    Ok(report)
}

/// Fixed-step gradient descent `u ← u − step·∇J̃(u)`.
pub fn solve_msa_baseline<M: SystemModel + ?Sized>(
    ap: &AugmentedProblem<'_, M>,
    u0: &ControlSequence,
    step: f64,
    max_iters: usize,
    grad_tol: f64,
) -> Result<SolveReport> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(OcpError::invalid("gradient step must be positive"));
    }
    let mut u = u0.clone();
    let mut report = SolveReport {
        final_u: u0.clone(),
        iterations: 0,
        grad_norm_history: Vec::new(),
        cost_history: Vec::new(),
        final_grad_norm_sq: f64::NAN,
        final_cost: f64::NAN,
        factorization_rescues: 0,
        converged: false,
    };
    let mut initial_cost = None;
    for t in 0.. {
        let first = gradient(ap, &u)?;
        let j0 = *initial_cost.get_or_insert(first.cost);
        if first.cost > 10.0 * j0.abs().max(f64::MIN_POSITIVE) {
            return Err(OcpError::NumericalDivergence {
                what: "gradient descent cost",
                step: t,
            });
        }
        let gnorm_sq = first.gradient.norm_squared();
        report.final_grad_norm_sq = gnorm_sq;
        report.final_cost = first.cost;
        if gnorm_sq < grad_tol {
            report.converged = true;
            break;
        }
        if t == max_iters {
            break;
        }
        report.grad_norm_history.push(gnorm_sq);
        report.cost_history.push(first.cost);
        u.stacked_mut().axpy(-step, &first.gradient, 1.0);
        report.iterations += 1;
    }
    report.final_u = u;
    Ok(report)
}
