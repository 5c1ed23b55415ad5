//! Augmented-Lagrangian outer loop around [`solve_subproblem`].

use nalgebra::{DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{OcpError, Result};
use crate::fbde::hessian;
use crate::model::{rollout, total_cost, ControlSequence, StateTrajectory, SystemModel};
use crate::penalty::{update_multipliers, violation_measure, AugmentedProblem, MultiplierTable, PenaltyState};
use crate::solver::{solve_subproblem, SolveReport, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlmConfig {
    pub sigma1: f64,
    pub beta: f64,
    /// Stop once the violation measure drops below this.
    pub eps: f64,
    pub max_outer: usize,
    /// σ is never raised above this.
    pub sigma_max: f64,
    /// When the returned point is a saddle of the last subproblem, re-solve
    /// from both sides of the most negative curvature direction and keep the
    /// better result.
    pub saddle_branching: bool,
    pub solver: SolverConfig,
}

impl Default for AlmConfig {
    fn default() -> Self {
        AlmConfig {
            sigma1: 1.0,
            beta: 10.0,
            eps: 1e-6,
            max_outer: 30,
            sigma_max: 1e8,
            saddle_branching: false,
            solver: SolverConfig::default(),
        }
    }
}

impl AlmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma1 > 0.0 && self.sigma1.is_finite()) {
            return Err(OcpError::invalid("sigma1 must be positive"));
        }
        if !(self.beta > 1.0 && self.beta.is_finite()) {
            return Err(OcpError::invalid("beta must exceed 1"));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(OcpError::invalid("eps must be positive"));
        }
        if self.max_outer == 0 {
            return Err(OcpError::invalid("max_outer must be positive"));
        }
        if self.sigma_max.is_nan() || self.sigma_max < self.sigma1 {
            return Err(OcpError::invalid("sigma_max must be at least sigma1"));
        }
        self.solver.validate()
    }
}

#[derive(Debug, Clone)]
pub struct AlmReport {
    pub final_u: ControlSequence,
    pub final_trajectory: StateTrajectory,
    pub outer_iterations: usize,
    pub violation_history: Vec<f64>,
    pub subproblem_reports: Vec<SolveReport>,
    /// Penalty state used for the last subproblem.
    pub final_penalty: PenaltyState,
    /// `max(0, γ + σ c)` at the final solution, the first-order multiplier estimate.
    pub multiplier_estimate: MultiplierTable,
    pub converged: bool,
    /// Inner iterations spent on saddle branches, including the discarded ones.
    pub branch_inner_iterations: usize,
    /// Whether a saddle branch replaced the first result.
    pub branched: bool,
}

impl AlmReport {
    /// Inner iterations of the returned solve plus any branch work.
    pub fn inner_iterations(&self) -> usize {
        self.subproblem_reports.iter().map(|r| r.iterations).sum::<usize>() + self.branch_inner_iterations
    }
}

/// Eigenvalues below `-SADDLE_TOL * (1 + max|H|)` count as negative curvature.
const SADDLE_TOL: f64 = 1e-9;
/// Branch offset relative to `1 + max|u|`.
const SADDLE_STEP: f64 = 1e-3;

/// Solves `min Σ L` subject to the model's constraints, starting from `u_init`.
///
/// Multipliers start at zero and σ at `sigma1`; each subproblem is warm-started
/// from the previous solution.
pub fn solve_constrained<M: SystemModel + ?Sized>(
    model: &M,
    x0: &DVector<f64>,
    u_init: &ControlSequence,
    cfg: &AlmConfig,
) -> Result<AlmReport> {
    cfg.validate()?;
    let start = PenaltyState::initial(cfg.sigma1, model.dims().l, u_init.horizon())?;
    outer_loop(model, x0, u_init.clone(), start, cfg, cfg.saddle_branching)
}

/// Unit eigenvector of the most negative Hessian eigenvalue at `u`, if that
/// eigenvalue is clearly negative.
fn saddle_direction<M: SystemModel + ?Sized>(
    ap: &AugmentedProblem<'_, M>,
    u: &ControlSequence,
    cfg: &AlmConfig,
) -> Result<Option<DVector<f64>>> {
    let h = hessian(ap, u, None, cfg.solver.row_mode)?;
    let tol = SADDLE_TOL * (1.0 + h.amax());
    let eig = SymmetricEigen::new(h);
    let (i, lambda) = eig.eigenvalues.argmin();
    Ok((lambda < -tol).then(|| eig.eigenvectors.column(i).into_owned()))
}

/// Converged beats not converged; then lower model cost, or lower final
/// violation when neither converged.
fn better<M: SystemModel + ?Sized>(model: &M, a: &AlmReport, b: &AlmReport) -> Result<bool> {
    if a.converged != b.converged {
        return Ok(a.converged);
    }
    if !a.converged {
        let last = |r: &AlmReport| r.violation_history.last().copied().unwrap_or(f64::INFINITY);
        return Ok(last(a) < last(b));
    }
    Ok(total_cost(model, &a.final_trajectory, &a.final_u)? < total_cost(model, &b.final_trajectory, &b.final_u)?)
}

fn outer_loop<M: SystemModel + ?Sized>(
    model: &M,
    x0: &DVector<f64>,
    mut u: ControlSequence,
    mut penalty: PenaltyState,
    cfg: &AlmConfig,
    branching: bool,
) -> Result<AlmReport> {
    let horizon = u.horizon();
    let mut violation_history = Vec::new();
    let mut subproblem_reports = Vec::new();

    loop {
        let outer = penalty.outer_iteration();
        let ap = AugmentedProblem::new(model, x0.clone(), horizon, penalty.clone())?;
        let report = solve_subproblem(&ap, &u, &cfg.solver).map_err(|e| OcpError::Subproblem {
            outer,
            source: Box::new(e),
        })?;
        u = report.final_u.clone();

        if branching && report.converged {
            if let Some(direction) = saddle_direction(&ap, &u, cfg)? {
                // Redo this outer iteration from the saddle and from both sides
                // of it, without further branching, and keep the best finish.
                let alpha = SADDLE_STEP * (1.0 + u.stacked().amax());
                let mut spent = report.iterations;
                let mut best: Option<(AlmReport, bool)> = None;
                for shift in [0.0, alpha, -alpha] {
                    let mut start = u.clone();
                    start.stacked_mut().axpy(shift, &direction, 1.0);
                    let candidate = outer_loop(model, x0, start, penalty.clone(), cfg, false)?;
                    spent += candidate.inner_iterations();
                    let wins = match &best {
                        None => true,
                        Some((b, _)) => better(model, &candidate, b)?,
                    };
                    if wins {
                        best = Some((candidate, shift != 0.0));
                    }
                }
                let (mut best, branched) = best.expect("three candidates");
                spent -= best.inner_iterations();
                best.subproblem_reports.splice(0..0, subproblem_reports);
                best.violation_history.splice(0..0, violation_history);
                best.outer_iterations = best.violation_history.len();
                best.branch_inner_iterations = spent;
                best.branched = branched;
                return Ok(best);
            }
        }
        subproblem_reports.push(report);

        let x = rollout(model, x0, &u)?;
        let violation = violation_measure(&penalty, &x, &u, model);
        violation_history.push(violation);
        let converged = violation < cfg.eps;
        let sigma_capped = penalty.sigma() >= cfg.sigma_max;
        let next = update_multipliers(&penalty, &x, &u, model, cfg.beta);
        if converged || outer >= cfg.max_outer || sigma_capped {
            return Ok(AlmReport {
                final_u: u,
                final_trajectory: x,
                outer_iterations: violation_history.len(),
                violation_history,
                subproblem_reports,
                final_penalty: penalty,
                multiplier_estimate: next.multipliers().clone(),
                converged,
                branch_inner_iterations: 0,
                branched: false,
            });
        }
        penalty = next.with_sigma_cap(cfg.sigma_max);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_lti_model, Constraint};
    use nalgebra::DMatrix;

    fn scalar_problem(constraints: Vec<Constraint>) -> crate::model::LtiModel {
        let one = DMatrix::from_element(1, 1, 1.0);
        let zero = DMatrix::zeros(1, 1);
        make_lti_model(&one, &one, &zero, &one, &DVector::zeros(1))
            .unwrap()
            .with_constraints(constraints)
            .unwrap()
    }

    #[test]
    fn unconstrained_needs_one_outer_iteration() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 0.1]);
        let model = make_lti_model(&a, &b, &DMatrix::identity(2, 2), &DMatrix::from_element(1, 1, 0.1), &DVector::zeros(2))
            .unwrap();
        let x0 = DVector::from_vec(vec![1.0, 0.0]);
        let u0 = ControlSequence::zeros(1, 8);
        let cfg = AlmConfig::default();
        let report = solve_constrained(&model, &x0, &u0, &cfg).unwrap();
        assert_eq!(report.outer_iterations, 1);
        assert_eq!(report.violation_history, vec![0.0]);
        let ap = AugmentedProblem::unconstrained(&model, x0, 8).unwrap();
        let direct = solve_subproblem(&ap, &u0, &cfg.solver).unwrap();
        assert_eq!(report.final_u, direct.final_u);
    }

    #[test]
    fn recovers_kkt_point_of_scalar_problem() {
        // min u² s.t. 1 − u <= 0: u* = 1, γ* = 2.
        let model = scalar_problem(vec![Constraint::ControlLower { component: 0, bound: 1.0 }]);
        let report = solve_constrained(&model, &DVector::zeros(1), &ControlSequence::zeros(1, 0), &AlmConfig::default())
            .unwrap();
        assert!(report.converged);
        let u = report.final_u.stacked()[0];
        assert!((u - 1.0).abs() < 1e-4, "u = {u}");
        let gamma = report.multiplier_estimate.get(0, 0);
        assert!((gamma - 2.0).abs() < 1e-2, "gamma = {gamma}");
        // Stationarity of u² + γ(1 − u).
        assert!((2.0 * u - gamma).abs() < 1e-3);
    }

    #[test]
    fn infeasible_pair_does_not_converge() {
        let model = scalar_problem(vec![
            Constraint::ControlUpper { component: 0, bound: 0.0 },
            Constraint::ControlLower { component: 0, bound: 1.0 },
        ]);
        let cfg = AlmConfig {
            max_outer: 12,
            ..AlmConfig::default()
        };
        let report = solve_constrained(&model, &DVector::zeros(1), &ControlSequence::zeros(1, 0), &cfg).unwrap();
        assert!(!report.converged);
        assert!(report.final_penalty.sigma() > cfg.sigma1);
        assert!(report.violation_history.iter().all(|v| *v > cfg.eps));
    }

    #[test]
    fn multipliers_never_negative() {
        let model = scalar_problem(vec![Constraint::ControlLower { component: 0, bound: 1.0 }]);
        let report = solve_constrained(&model, &DVector::zeros(1), &ControlSequence::zeros(1, 3), &AlmConfig::default())
            .unwrap();
        assert!(report.final_penalty.multipliers().min() >= 0.0);
        assert!(report.multiplier_estimate.min() >= 0.0);
        assert_eq!(report.violation_history.len(), report.outer_iterations);
    }

    /// Forced progress `u_x >= 2` into a keep-out disc centred on the target:
    /// the straight approach ends on a saddle; passing below is optimal
    /// because `u_y <= 0.3` rules out passing above.
    fn forced_detour() -> crate::model::LtiModel {
        let eye = DMatrix::identity(2, 2);
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]));
        make_lti_model(&eye, &eye, &q, &(eye.clone() * 0.01), &DVector::from_vec(vec![2.0, 0.0]))
            .unwrap()
            .with_constraints(vec![
                Constraint::ControlLower { component: 0, bound: 2.0 },
                Constraint::ControlUpper { component: 1, bound: 0.3 },
                Constraint::KeepOut { x_index: 0, y_index: 1, center: [2.0, 0.0], radius: 0.5 },
            ])
            .unwrap()
    }

    #[test]
    fn symmetric_start_stays_on_saddle_without_branching() {
        let model = forced_detour();
        let report = solve_constrained(&model, &DVector::zeros(2), &ControlSequence::zeros(2, 1), &AlmConfig::default())
            .unwrap();
        let x1 = report.final_trajectory.state(1);
        assert_eq!(x1[1], 0.0);
        assert!((x1[0] - 2.5).abs() < 1e-3, "{x1}");
        assert!(!report.branched);
    }

    #[test]
    fn branching_leaves_the_saddle_to_the_feasible_side() {
        let model = forced_detour();
        let plain = solve_constrained(&model, &DVector::zeros(2), &ControlSequence::zeros(2, 1), &AlmConfig::default())
            .unwrap();
        let cfg = AlmConfig {
            saddle_branching: true,
            ..AlmConfig::default()
        };
        let report = solve_constrained(&model, &DVector::zeros(2), &ControlSequence::zeros(2, 1), &cfg).unwrap();
        assert!(report.converged && report.branched);
        let x1 = report.final_trajectory.state(1);
        assert!(x1[1] < -0.4, "{x1}");
        let cost = |r: &AlmReport| total_cost(&model, &r.final_trajectory, &r.final_u).unwrap();
        assert!(cost(&report) < cost(&plain));
        assert!(report.branch_inner_iterations > 0);
        assert_eq!(report.violation_history.len(), report.outer_iterations);
        assert_eq!(report.subproblem_reports.len(), report.outer_iterations);
    }

    #[test]
    fn branching_is_inert_on_convex_problems() {
        let model = scalar_problem(vec![Constraint::ControlLower { component: 0, bound: 1.0 }]);
        let cfg = AlmConfig {
            saddle_branching: true,
            ..AlmConfig::default()
        };
        let u0 = ControlSequence::zeros(1, 0);
        let with = solve_constrained(&model, &DVector::zeros(1), &u0, &cfg).unwrap();
        let without = solve_constrained(&model, &DVector::zeros(1), &u0, &AlmConfig::default()).unwrap();
        assert_eq!(with.final_u, without.final_u);
        assert!(!with.branched);
        assert_eq!(with.branch_inner_iterations, 0);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let model = scalar_problem(vec![]);
        let cfg = AlmConfig {
            beta: 1.0,
            ..AlmConfig::default()
        };
        let err = solve_constrained(&model, &DVector::zeros(1), &ControlSequence::zeros(1, 0), &cfg).unwrap_err();
        assert!(err.is_invalid_input());
    }
}
