//! System models: dynamics, running cost, inequality constraints and their
//! derivatives, evaluated per time step.
//!
//! Derivatives are taken over the joint vector `z = (x, u)` of length
//! `n + m`. Second derivatives of the dynamics are only ever exposed as the
//! weight-contracted form `w · ∂²f`, which is what the costate sweeps need.

mod agv;
mod check;
mod constraint;
mod lti;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_finite_vec, OcpError, Result};

pub use agv::{make_agv_model, AgvModel, AgvParams};
pub use check::{self_check_derivatives, BlockCheck, DerivativeReport};
pub use constraint::{control_box, Constraint};
pub use lti::{make_lti_model, LtiModel};

/// State, control and constraint counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
    pub l: usize,
}

impl Dims {
    pub fn new(n: usize, m: usize, l: usize) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(OcpError::invalid(format!(
                "state and control dimensions must be positive (n={n}, m={m})"
            )));
        }
        Ok(Dims { n, m, l })
    }

    /// Length of the joint `(x, u)` vector.
    pub fn joint(&self) -> usize {
        self.n + self.m
    }
}

/// A discrete-time system `x_{k+1} = f(x_k, u_k)` with running cost
/// `L(x_k, u_k)` and constraints `c_i(x_k, u_k) <= 0`.
///
/// Every method must be pure. The step index `k` lets a model carry
/// time-varying references; models that ignore it are time-invariant.
pub trait SystemModel: Send + Sync {
    fn dims(&self) -> Dims;

    fn dynamics(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;

    /// `(∂f/∂x, ∂f/∂u)`, shapes `n×n` and `n×m`.
    fn dynamics_jacobian(
        &self,
        k: usize,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> (DMatrix<f64>, DMatrix<f64>);

    /// `Σ_r w_r ∂²f_r/∂z²`, shape `(n+m)×(n+m)`.
    fn dynamics_curvature(
        &self,
        k: usize,
        x: &DVector<f64>,
        u: &DVector<f64>,
        w: &DVector<f64>,
    ) -> DMatrix<f64>;

    fn running_cost(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64;

    /// `∂L/∂z`, length `n+m`.
    fn cost_gradient(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;

    fn cost_hessian(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64>;

    fn constraint(&self, _k: usize, i: usize, _x: &DVector<f64>, _u: &DVector<f64>) -> f64 {
        panic!("model declares no constraint {i}")
    }

    fn constraint_gradient(
        &self,
        _k: usize,
        i: usize,
        _x: &DVector<f64>,
        _u: &DVector<f64>,
    ) -> DVector<f64> {
        panic!("model declares no constraint {i}")
    }

    fn constraint_hessian(
        &self,
        _k: usize,
        i: usize,
        _x: &DVector<f64>,
        _u: &DVector<f64>,
    ) -> DMatrix<f64> {
        panic!("model declares no constraint {i}")
    }
}

/// Controls `u_0..u_N`, stored stacked as one vector of length `(N+1)·m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSequence {
    m: usize,
    stacked: DVector<f64>,
}

impl ControlSequence {
    pub fn from_stacked(m: usize, stacked: DVector<f64>) -> Result<Self> {
        if m == 0 || stacked.is_empty() || !stacked.len().is_multiple_of(m) {
            return Err(OcpError::invalid(format!(
                "stacked control of length {} is not a positive multiple of m={m}",
                stacked.len()
            )));
        }
        Ok(ControlSequence { m, stacked })
    }

    pub fn from_blocks(blocks: &[DVector<f64>]) -> Result<Self> {
        let m = blocks.first().map(|b| b.len()).unwrap_or(0);
        if m == 0 || blocks.iter().any(|b| b.len() != m) {
            return Err(OcpError::invalid(
                "control blocks must be non-empty and of equal length",
            ));
        }
        let stacked = DVector::from_iterator(
            blocks.len() * m,
            blocks.iter().flat_map(|b| b.iter().copied()),
        );
        Ok(ControlSequence { m, stacked })
    }

    pub fn zeros(m: usize, horizon: usize) -> Self {
        ControlSequence {
            m,
            stacked: DVector::zeros((horizon + 1) * m),
        }
    }

    /// Same control block repeated at every step.
    pub fn constant(block: &DVector<f64>, horizon: usize) -> Self {
        let m = block.len();
        let stacked =
            DVector::from_iterator((horizon + 1) * m, (0..=horizon).flat_map(|_| block.iter().copied()));
        ControlSequence { m, stacked }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn horizon(&self) -> usize {
        self.stacked.len() / self.m - 1
    }

    pub fn num_blocks(&self) -> usize {
        self.stacked.len() / self.m
    }

    pub fn block(&self, k: usize) -> DVector<f64> {
        self.stacked.rows(k * self.m, self.m).into_owned()
    }

    pub fn set_block(&mut self, k: usize, value: &DVector<f64>) {
        self.stacked.rows_mut(k * self.m, self.m).copy_from(value);
    }

    pub fn blocks(&self) -> Vec<DVector<f64>> {
        (0..self.num_blocks()).map(|k| self.block(k)).collect()
    }

    pub fn stacked(&self) -> &DVector<f64> {
        &self.stacked
    }

    pub fn stacked_mut(&mut self) -> &mut DVector<f64> {
        &mut self.stacked
    }

    pub fn into_stacked(self) -> DVector<f64> {
        self.stacked
    }
}

/// States `x_0..x_N` produced by [`rollout`].
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrajectory {
    states: Vec<DVector<f64>>,
}

impl StateTrajectory {
    pub fn from_states(states: Vec<DVector<f64>>) -> Self {
        StateTrajectory { states }
    }

    pub fn horizon(&self) -> usize {
        self.states.len() - 1
    }

    pub fn state(&self, k: usize) -> &DVector<f64> {
        &self.states[k]
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn last(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory holds at least x_0")
    }
}

/// Simulates `x_{k+1} = f(x_k, u_k)` from `x0`, returning `x_0..x_N`.
///
/// `x_{N+1}` is never formed: its costate is zero, so it does not enter
/// cost or derivatives.
pub fn rollout<M: SystemModel + ?Sized>(
    model: &M,
    x0: &DVector<f64>,
    u: &ControlSequence,
) -> Result<StateTrajectory> {
    let dims = model.dims();
    if x0.len() != dims.n {
        return Err(OcpError::invalid(format!(
            "initial state has length {}, model expects {}",
            x0.len(),
            dims.n
        )));
    }
    if u.m() != dims.m {
        return Err(OcpError::invalid(format!(
            "control blocks have length {}, model expects {}",
            u.m(),
            dims.m
        )));
    }
    check_finite_vec(x0, "rollout", 0)?;
    let horizon = u.horizon();
    let mut states = Vec::with_capacity(horizon + 1);
    states.push(x0.clone());
    for k in 0..horizon {
        let next = model.dynamics(k, &states[k], &u.block(k));
        check_finite_vec(&next, "rollout", k + 1)?;
        states.push(next);
    }
    Ok(StateTrajectory { states })
}

/// `Σ_{k=0}^{N} L(x_k, u_k)`.
pub fn total_cost<M: SystemModel + ?Sized>(
    model: &M,
    x: &StateTrajectory,
    u: &ControlSequence,
) -> Result<f64> {
    if x.states.len() != u.num_blocks() {
        return Err(OcpError::invalid(format!(
            "trajectory has {} states but control sequence has {} blocks",
            x.states.len(),
            u.num_blocks()
        )));
    }
    let mut cost = 0.0;
    for (k, xk) in x.states.iter().enumerate() {
        let stage = model.running_cost(k, xk, &u.block(k));
        if !stage.is_finite() {
            return Err(OcpError::NumericalDivergence {
                what: "running cost",
                step: k,
            });
        }
        cost += stage;
    }
    Ok(cost)
}

/// Splits a joint `(x, u)` vector.
pub fn split_joint(z: &DVector<f64>, n: usize) -> (DVector<f64>, DVector<f64>) {
    let m = z.len() - n;
    (z.rows(0, n).into_owned(), z.rows(n, m).into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar_chain() -> LtiModel {
        let one = DMatrix::from_element(1, 1, 1.0);
        make_lti_model(&one, &one, &one, &one, &DVector::zeros(1)).unwrap()
    }

    #[test]
    fn scalar_rollout_accumulates_controls() {
        let model = scalar_chain();
        let u = ControlSequence::from_stacked(1, DVector::from_vec(vec![1.0, 1.0, 1.0])).unwrap();
        let x = rollout(&model, &DVector::zeros(1), &u).unwrap();
        let xs: Vec<f64> = x.states().iter().map(|s| s[0]).collect();
        assert_eq!(xs, vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn scalar_total_cost_two_steps() {
        let model = scalar_chain();
        let u = ControlSequence::zeros(1, 1);
        let x = rollout(&model, &DVector::from_element(1, 1.0), &u).unwrap();
        assert_eq!(total_cost(&model, &x, &u).unwrap(), 2.0);
    }

    #[test]
    fn single_term_control_cost() {
        let zero = DMatrix::zeros(1, 1);
        let one = DMatrix::from_element(1, 1, 1.0);
        let model = make_lti_model(&one, &one, &zero, &one, &DVector::zeros(1)).unwrap();
        let u = ControlSequence::from_stacked(1, DVector::from_element(1, 3.0)).unwrap();
        let x = rollout(&model, &DVector::zeros(1), &u).unwrap();
        assert_eq!(total_cost(&model, &x, &u).unwrap(), 9.0);
    }

    #[test]
    fn rollout_rejects_wrong_state_length() {
        let model = scalar_chain();
        let err = rollout(&model, &DVector::zeros(2), &ControlSequence::zeros(1, 2)).unwrap_err();
        assert!(matches!(err, OcpError::InvalidArgument(_)));
    }

    #[test]
    fn rollout_reports_divergent_step() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let model = make_lti_model(&one, &one, &one, &one, &DVector::zeros(1)).unwrap();
        let u = ControlSequence::from_stacked(1, DVector::from_vec(vec![0.0, f64::INFINITY, 0.0]))
            .unwrap();
        let err = rollout(&model, &DVector::zeros(1), &u).unwrap_err();
        assert!(matches!(
            err,
            OcpError::NumericalDivergence { what: "rollout", step: 2 }
        ));
    }

    #[test]
    fn control_sequence_rejects_ragged_input() {
        assert!(ControlSequence::from_stacked(2, DVector::zeros(3)).is_err());
        assert!(ControlSequence::from_blocks(&[DVector::zeros(2), DVector::zeros(1)]).is_err());
    }

    proptest! {
        #[test]
        fn stacked_and_block_views_agree(m in 1usize..4, horizon in 0usize..6, seed in any::<u64>()) {
            let len = (horizon + 1) * m;
            let data: Vec<f64> = (0..len).map(|i| ((seed as f64) * 1e-3 + i as f64).sin()).collect();
            let u = ControlSequence::from_stacked(m, DVector::from_vec(data)).unwrap();
            let back = ControlSequence::from_blocks(&u.blocks()).unwrap();
            prop_assert_eq!(&back, &u);
            prop_assert_eq!(u.horizon(), horizon);
        }
    }
}
