//! Augmented-Lagrangian transcription of the inequality constraints.
//!
//! With slack variables minimized out, constraint `i` at step `k` contributes
//!
//! ```text
//! (1 / 2σ) · ( max(0, γ_ik + σ c_i)² − γ_ik² )
//! ```
//!
//! to the running cost. At the kink `γ_ik + σ c_i = 0` the inactive branch is
//! used for both derivatives.

use nalgebra::{DMatrix, DVector};

use crate::error::{OcpError, Result};
use crate::model::{rollout, ControlSequence, StateTrajectory, SystemModel};

/// Multipliers `γ_{i,k}` for `i < l`, `k = 0..=N`; all entries are non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierTable {
    gamma: DMatrix<f64>,
}

impl MultiplierTable {
    pub fn zeros(l: usize, horizon: usize) -> Self {
        MultiplierTable {
            gamma: DMatrix::zeros(l, horizon + 1),
        }
    }

    pub fn from_matrix(gamma: DMatrix<f64>) -> Result<Self> {
        if gamma.ncols() == 0 {
            return Err(OcpError::invalid("multiplier table needs at least one time step"));
        }
        if gamma.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(OcpError::invalid("multipliers must be finite and non-negative"));
        }
        Ok(MultiplierTable { gamma })
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.gamma[(i, k)]
    }

    pub fn num_constraints(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn horizon(&self) -> usize {
        self.gamma.ncols() - 1
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn min(&self) -> f64 {
        self.gamma.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Penalty parameter, multipliers and the outer-iteration counter `j` (from 1).
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyState {
    sigma: f64,
    multipliers: MultiplierTable,
    outer: usize,
}

impl PenaltyState {
    pub fn new(sigma: f64, multipliers: MultiplierTable) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(OcpError::InvalidState(format!(
                "penalty parameter must be positive and finite, got {sigma}"
            )));
        }
        Ok(PenaltyState {
            sigma,
            multipliers,
            outer: 1,
        })
    }

    /// `γ = 0`, `σ = sigma1`, `j = 1`.
    pub fn initial(sigma1: f64, l: usize, horizon: usize) -> Result<Self> {
        Self::new(sigma1, MultiplierTable::zeros(l, horizon))
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn multipliers(&self) -> &MultiplierTable {
        &self.multipliers
    }

    pub fn outer_iteration(&self) -> usize {
        self.outer
    }

    /// Clamps σ from above, leaving everything else untouched.
    pub fn with_sigma_cap(mut self, cap: f64) -> Self {
        self.sigma = self.sigma.min(cap);
        self
    }

    fn shifted(&self, i: usize, k: usize, c: f64) -> f64 {
        self.multipliers.get(i, k) + self.sigma * c
    }
}

/// `γ ← max(0, γ + σ c(x_k, u_k))`, `σ ← β σ`, `j ← j + 1`, evaluated on the
/// trajectory of the current solution.
pub fn update_multipliers<M: SystemModel + ?Sized>(
    ps: &PenaltyState,
    x: &StateTrajectory,
    u: &ControlSequence,
    model: &M,
    beta: f64,
) -> PenaltyState {
    let l = ps.multipliers.num_constraints();
    let steps = ps.multipliers.gamma.ncols();
    let gamma = DMatrix::from_fn(l, steps, |i, k| {
        let c = model.constraint(k, i, x.state(k), &u.block(k));
        ps.shifted(i, k, c).max(0.0)
    });
    PenaltyState {
        sigma: beta * ps.sigma,
        multipliers: MultiplierTable { gamma },
        outer: ps.outer + 1,
    }
}

/// `Σ_i Σ_k max(c_i(x_k, u_k), −γ_ik / σ)²`, the outer-loop stopping statistic.
pub fn violation_measure<M: SystemModel + ?Sized>(
    ps: &PenaltyState,
    x: &StateTrajectory,
    u: &ControlSequence,
    model: &M,
) -> f64 {
    let l = ps.multipliers.num_constraints();
    let mut total = 0.0;
    for k in 0..ps.multipliers.gamma.ncols() {
        let uk = u.block(k);
        for i in 0..l {
            let c = model.constraint(k, i, x.state(k), &uk);
            let v = c.max(-ps.multipliers.get(i, k) / ps.sigma);
            total += v * v;
        }
    }
    total
}

/// A model, its initial state and a penalty state: the smooth subproblem
/// minimized over the stacked controls.
#[derive(Debug, Clone)]
pub struct AugmentedProblem<'a, M: SystemModel + ?Sized> {
    model: &'a M,
    x0: DVector<f64>,
    horizon: usize,
    penalty: PenaltyState,
}

impl<'a, M: SystemModel + ?Sized> AugmentedProblem<'a, M> {
    pub fn new(model: &'a M, x0: DVector<f64>, horizon: usize, penalty: PenaltyState) -> Result<Self> {
        let dims = model.dims();
        if x0.len() != dims.n {
            return Err(OcpError::invalid(format!(
                "initial state has length {}, model expects {}",
                x0.len(),
                dims.n
            )));
        }
        let table = penalty.multipliers();
        if table.num_constraints() != dims.l || table.horizon() != horizon {
            return Err(OcpError::InvalidState(format!(
                "multiplier table is {}x{}, problem needs {}x{}",
                table.num_constraints(),
                table.horizon() + 1,
                dims.l,
                horizon + 1
            )));
        }
        Ok(AugmentedProblem {
            model,
            x0,
            horizon,
            penalty,
        })
    }

    /// Problem without multipliers at `σ = 1`; identical to the raw cost when `l = 0`.
    pub fn unconstrained(model: &'a M, x0: DVector<f64>, horizon: usize) -> Result<Self> {
        let l = model.dims().l;
        Self::new(model, x0, horizon, PenaltyState::initial(1.0, l, horizon)?)
    }

    pub fn model(&self) -> &'a M {
        self.model
    }

    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn penalty(&self) -> &PenaltyState {
        &self.penalty
    }

    pub(crate) fn check_controls(&self, u: &ControlSequence) -> Result<()> {
        let m = self.model.dims().m;
        if u.m() != m || u.horizon() != self.horizon {
            return Err(OcpError::invalid(format!(
                "control sequence has {} blocks of length {}, problem needs {} blocks of length {m}",
                u.num_blocks(),
                u.m(),
                self.horizon + 1
            )));
        }
        Ok(())
    }

    /// `L(x,u) + (1/2σ) Σ_i { max(0, γ_ik + σ c_i)² − γ_ik² }`.
    pub fn augmented_running_cost(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let sigma = self.penalty.sigma;
        let mut penalty = 0.0;
        for i in 0..self.model.dims().l {
            let gamma = self.penalty.multipliers.get(i, k);
            let active = self.penalty.shifted(i, k, self.model.constraint(k, i, x, u)).max(0.0);
            penalty += active * active - gamma * gamma;
        }
        self.model.running_cost(k, x, u) + penalty / (2.0 * sigma)
    }

    /// Gradient of the augmented running cost over `z = (x, u)`.
    pub fn augmented_cost_gradient(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let mut grad = self.model.cost_gradient(k, x, u);
        for i in 0..self.model.dims().l {
            let s = self.penalty.shifted(i, k, self.model.constraint(k, i, x, u));
            if s > 0.0 {
                grad.axpy(s, &self.model.constraint_gradient(k, i, x, u), 1.0);
            }
        }
        grad
    }

    /// Gradient and Hessian of the augmented running cost over `z = (x, u)`.
    pub fn augmented_cost_derivatives(
        &self,
        k: usize,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> (DVector<f64>, DMatrix<f64>) {
        let mut grad = self.model.cost_gradient(k, x, u);
        let mut hess = self.model.cost_hessian(k, x, u);
        let sigma = self.penalty.sigma;
        for i in 0..self.model.dims().l {
            let s = self.penalty.shifted(i, k, self.model.constraint(k, i, x, u));
            if s > 0.0 {
                let cg = self.model.constraint_gradient(k, i, x, u);
                grad.axpy(s, &cg, 1.0);
                hess.ger(sigma, &cg, &cg, 1.0);
                hess += self.model.constraint_hessian(k, i, x, u) * s;
            }
        }
        (grad, hess)
    }

    /// Augmented cost of the controls `u` from the problem's initial state.
    pub fn total_cost(&self, u: &ControlSequence) -> Result<f64> {
        self.check_controls(u)?;
        let x = rollout(self.model, &self.x0, u)?;
        self.total_cost_along(&x, u)
    }

    pub(crate) fn total_cost_along(&self, x: &StateTrajectory, u: &ControlSequence) -> Result<f64> {
        let mut cost = 0.0;
        for k in 0..=self.horizon {
            let stage = self.augmented_running_cost(k, x.state(k), &u.block(k));
            if !stage.is_finite() {
                return Err(OcpError::NumericalDivergence {
                    what: "augmented cost",
                    step: k,
                });
            }
            cost += stage;
        }
        Ok(cost)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_lti_model, Constraint, LtiModel};
    use proptest::prelude::*;

    /// n = m = 1, `L = weight·u²`, one constraint on `u`.
    fn scalar(weight: f64, constraint: Option<Constraint>) -> LtiModel {
        let one = DMatrix::from_element(1, 1, 1.0);
        let zero = DMatrix::zeros(1, 1);
        make_lti_model(&one, &one, &zero, &DMatrix::from_element(1, 1, weight), &DVector::zeros(1))
            .unwrap()
            .with_constraints(constraint.into_iter().collect())
            .unwrap()
    }

    fn problem(model: &LtiModel, sigma: f64, gamma: f64) -> AugmentedProblem<'_, LtiModel> {
        let l = model.dims().l;
        let table = MultiplierTable::from_matrix(DMatrix::from_element(l, 1, gamma)).unwrap();
        AugmentedProblem::new(model, DVector::zeros(1), 0, PenaltyState::new(sigma, table).unwrap()).unwrap()
    }

    fn s(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    const UPPER: Constraint = Constraint::ControlUpper { component: 0, bound: 2.35 };

    #[test]
    fn violated_upper_speed_bound() {
        // L is tiny so the penalty term dominates; subtract it back out.
        let model = scalar(1e-300, Some(UPPER));
        let ap = problem(&model, 10.0, 0.0);
        let value = ap.augmented_running_cost(0, &s(0.0), &s(2.4));
        assert!((value - 0.0125).abs() < 1e-15);
        let (g, h) = ap.augmented_cost_derivatives(0, &s(0.0), &s(2.4));
        assert!((g[1] - 0.5).abs() < 1e-12);
        assert!((h[(1, 1)] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn inactive_constraint_changes_nothing() {
        let model = scalar(1.0, Some(UPPER));
        let bare = scalar(1.0, None);
        let ap = problem(&model, 10.0, 0.0);
        let reference = problem(&bare, 10.0, 0.0);
        let (x, u) = (s(0.3), s(1.0));
        assert_eq!(ap.augmented_running_cost(0, &x, &u), reference.augmented_running_cost(0, &x, &u));
        assert_eq!(
            ap.augmented_cost_derivatives(0, &x, &u),
            reference.augmented_cost_derivatives(0, &x, &u)
        );
    }

    #[test]
    fn satisfied_constraint_with_multiplier() {
        // c = u - 2.35 = -0.2 at u = 2.15.
        let model = scalar(1e-300, Some(UPPER));
        let ap = problem(&model, 10.0, 1.0);
        let value = ap.augmented_running_cost(0, &s(0.0), &s(2.15));
        assert!((value + 0.05).abs() < 1e-12);
    }

    #[test]
    fn multiplier_update_cases() {
        let model = scalar(1.0, Some(UPPER));
        let x = StateTrajectory::from_states(vec![s(0.0)]);
        let table = MultiplierTable::from_matrix(DMatrix::from_element(1, 1, 1.0)).unwrap();
        let ps = PenaltyState::new(10.0, table).unwrap();
        let u = ControlSequence::from_stacked(1, s(2.15)).unwrap();
        let next = update_multipliers(&ps, &x, &u, &model, 10.0);
        assert_eq!(next.multipliers().get(0, 0), 0.0);
        assert_eq!(next.outer_iteration(), 2);

        let at_bound = ControlSequence::from_stacked(1, s(2.35)).unwrap();
        let ps0 = PenaltyState::initial(1.0, 1, 0).unwrap();
        let next = update_multipliers(&ps0, &x, &at_bound, &model, 10.0);
        assert_eq!(next.multipliers().get(0, 0), 0.0);
        assert_eq!(next.sigma(), 10.0);
    }

    #[test]
    fn violation_measure_cases() {
        let model = scalar(1.0, Some(UPPER));
        let x = StateTrajectory::from_states(vec![s(0.0)]);
        let control = |v: f64| ControlSequence::from_stacked(1, s(v)).unwrap();
        let ps0 = PenaltyState::initial(10.0, 1, 0).unwrap();
        assert_eq!(violation_measure(&ps0, &x, &control(1.0), &model), 0.0);
        assert!((violation_measure(&ps0, &x, &control(2.45), &model) - 0.01).abs() < 1e-12);
        let table = MultiplierTable::from_matrix(DMatrix::from_element(1, 1, 1.0)).unwrap();
        let ps = PenaltyState::new(10.0, table).unwrap();
        assert!((violation_measure(&ps, &x, &control(1.85), &model) - 0.01).abs() < 1e-12);
    }

    #[test]
    fn non_positive_sigma_is_rejected() {
        let err = PenaltyState::initial(0.0, 1, 0).unwrap_err();
        assert!(matches!(err, OcpError::InvalidState(_)));
        assert!(PenaltyState::initial(-1.0, 1, 0).is_err());
    }

    #[test]
    fn kink_uses_inactive_branch() {
        // γ + σc = 1 + 10(u - 2.35) = 0 at u = 2.25.
        let model = scalar(1.0, Some(UPPER));
        let bare = scalar(1.0, None);
        let ap = problem(&model, 10.0, 1.0);
        let reference = problem(&bare, 10.0, 1.0);
        let (x, u) = (s(0.0), s(2.25));
        assert!((ap.penalty().shifted(0, 0, model.constraint(0, 0, &x, &u))).abs() < 1e-12);
        let (g, h) = ap.augmented_cost_derivatives(0, &x, &u);
        let (g0, h0) = reference.augmented_cost_derivatives(0, &x, &u);
        assert!((g - g0).amax() < 1e-12);
        assert!((h - h0).amax() < 1e-12);
    }

    proptest! {
        #[test]
        fn continuous_across_kink(gamma in 0.01f64..5.0, sigma in 0.5f64..100.0, side in -1.0f64..1.0) {
            let model = scalar(1.0, Some(UPPER));
            let ap = problem(&model, sigma, gamma);
            let kink = 2.35 - gamma / sigma;
            let x = s(0.0);
            let a = ap.augmented_running_cost(0, &x, &s(kink + side * 1e-8));
            let b = ap.augmented_running_cost(0, &x, &s(kink - side * 1e-8));
            prop_assert!((a - b).abs() < 1e-6);
        }

        #[test]
        fn multipliers_stay_non_negative(gamma in 0.0f64..5.0, sigma in 0.1f64..100.0, u in -5.0f64..5.0, beta in 1.1f64..20.0) {
            let model = scalar(1.0, Some(UPPER));
            let x = StateTrajectory::from_states(vec![s(0.0)]);
            let table = MultiplierTable::from_matrix(DMatrix::from_element(1, 1, gamma)).unwrap();
            let ps = PenaltyState::new(sigma, table).unwrap();
            let next = update_multipliers(&ps, &x, &ControlSequence::from_stacked(1, s(u)).unwrap(), &model, beta);
            prop_assert!(next.multipliers().min() >= 0.0);
            prop_assert!(next.sigma() > ps.sigma());
        }
    }
}
