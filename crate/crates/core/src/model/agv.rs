use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{Constraint, ControlSequence, Dims, SystemModel};
use crate::error::{OcpError, Result};

/// Parameters of the unicycle tracking problem.
///
/// `v_ref`/`omega_ref` are per-step reference velocities; the last entry is
/// held beyond the end of the table. The reference pose sequence is generated
/// by driving the discretized unicycle with these velocities from
/// `reference_start`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgvParams {
    pub delta: f64,
    pub v_ref: Vec<f64>,
    pub omega_ref: Vec<f64>,
    pub reference_start: [f64; 3],
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl AgvParams {
    fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(OcpError::invalid(format!("time step must be positive, got {}", self.delta)));
        }
        if self.v_ref.is_empty() || self.omega_ref.is_empty() {
            return Err(OcpError::invalid("reference velocity tables must be non-empty"));
        }
        check_weight(&self.q, 3, "Q", false)?;
        check_weight(&self.r, 2, "R", true)?;
        Ok(())
    }
}

fn check_weight(w: &DMatrix<f64>, dim: usize, name: &str, strict: bool) -> Result<()> {
    if w.shape() != (dim, dim) {
        return Err(OcpError::invalid(format!("{name} must be {dim}x{dim}")));
    }
    if w.iter().any(|v| !v.is_finite()) || (w - w.transpose()).amax() > 1e-12 * (1.0 + w.amax()) {
        return Err(OcpError::invalid(format!("{name} must be finite and symmetric")));
    }
    let min_eig = SymmetricEigen::new(w.clone()).eigenvalues.min();
    let tol = 1e-12 * (1.0 + w.amax());
    if (strict && min_eig <= 0.0) || (!strict && min_eig < -tol) {
        return Err(OcpError::invalid(format!(
            "{name} must be positive {}definite (smallest eigenvalue {min_eig})",
            if strict { "" } else { "semi-" }
        )));
    }
    Ok(())
}

/// Forward-Euler unicycle with quadratic tracking cost.
///
/// State `(x, y, θ)`, control `(v, ω)`:
/// `x⁺ = x + Δ v cos θ`, `y⁺ = y + Δ v sin θ`, `θ⁺ = θ + Δ ω`.
#[derive(Debug, Clone)]
pub struct AgvModel {
    delta: f64,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    state_ref: Arc<[[f64; 3]]>,
    control_ref: Arc<[[f64; 2]]>,
    constraints: Vec<Constraint>,
    offset: usize,
}

/// Builds the tracking model with reference tables covering steps `0..=horizon`.
pub fn make_agv_model(params: &AgvParams, horizon: usize) -> Result<AgvModel> {
    params.validate()?;
    let at = |table: &[f64], k: usize| table[k.min(table.len() - 1)];
    let control_ref: Vec<[f64; 2]> = (0..=horizon)
        .map(|k| [at(&params.v_ref, k), at(&params.omega_ref, k)])
        .collect();
    let mut state_ref = Vec::with_capacity(horizon + 1);
    state_ref.push(params.reference_start);
    for k in 0..horizon {
        let [px, py, th] = state_ref[k];
        let [v, w] = control_ref[k];
        state_ref.push([
            px + params.delta * v * th.cos(),
            py + params.delta * v * th.sin(),
            th + params.delta * w,
        ]);
    }
    Ok(AgvModel {
        delta: params.delta,
        q: params.q.clone(),
        r: params.r.clone(),
        state_ref: state_ref.into(),
        control_ref: control_ref.into(),
        constraints: Vec::new(),
        offset: 0,
    })
}

impl AgvModel {
    pub fn with_constraints(mut self, constraints: Vec<Constraint>) -> Result<Self> {
        for c in &constraints {
            c.validate(3, 2)?;
        }
        self.constraints = constraints;
        Ok(self)
    }

    /// Same model with the reference tables shifted so that local step 0
    /// reads global step `offset`. Entries past the table end are clamped.
    pub fn window(&self, offset: usize) -> AgvModel {
        AgvModel {
            offset,
            ..self.clone()
        }
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    fn index(&self, k: usize) -> usize {
        (self.offset + k).min(self.state_ref.len() - 1)
    }

    pub fn reference_state(&self, k: usize) -> DVector<f64> {
        DVector::from_row_slice(&self.state_ref[self.index(k)])
    }

    pub fn reference_control(&self, k: usize) -> DVector<f64> {
        DVector::from_row_slice(&self.control_ref[self.index(k)])
    }

    /// Reference controls for local steps `0..=horizon`.
    pub fn reference_controls(&self, horizon: usize) -> ControlSequence {
        let blocks: Vec<_> = (0..=horizon).map(|k| self.reference_control(k)).collect();
        ControlSequence::from_blocks(&blocks).expect("reference blocks have length 2")
    }

    /// Number of global reference steps, i.e. `horizon + 1` at construction.
    pub fn reference_len(&self) -> usize {
        self.state_ref.len()
    }
}

impl SystemModel for AgvModel {
    fn dims(&self) -> Dims {
        Dims {
            n: 3,
            m: 2,
            l: self.constraints.len(),
        }
    }

    fn dynamics(&self, _k: usize, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let (th, v, w) = (x[2], u[0], u[1]);
        DVector::from_vec(vec![
            x[0] + self.delta * v * th.cos(),
            x[1] + self.delta * v * th.sin(),
            th + self.delta * w,
        ])
    }

    fn dynamics_jacobian(
        &self,
        _k: usize,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let (s, c) = x[2].sin_cos();
        let d = self.delta;
        let v = u[0];
        let fx = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, -d * v * s, 0.0, 1.0, d * v * c, 0.0, 0.0, 1.0]);
        let fu = DMatrix::from_row_slice(3, 2, &[d * c, 0.0, d * s, 0.0, 0.0, d]);
        (fx, fu)
    }

    fn dynamics_curvature(
        &self,
        _k: usize,
        x: &DVector<f64>,
        u: &DVector<f64>,
        w: &DVector<f64>,
    ) -> DMatrix<f64> {
        // Only the (θ, v) block of the first two rows is curved.
        let (s, c) = x[2].sin_cos();
        let d = self.delta;
        let mut out = DMatrix::zeros(5, 5);
        out[(2, 2)] = -d * u[0] * (w[0] * c + w[1] * s);
        let cross = d * (-w[0] * s + w[1] * c);
        out[(2, 3)] = cross;
        out[(3, 2)] = cross;
        out
    }

    fn running_cost(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let ex = x - self.reference_state(k);
        let eu = u - self.reference_control(k);
        (ex.transpose() * &self.q * &ex)[0] + (eu.transpose() * &self.r * &eu)[0]
    }

    fn cost_gradient(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let gx = 2.0 * &self.q * (x - self.reference_state(k));
        let gu = 2.0 * &self.r * (u - self.reference_control(k));
        DVector::from_iterator(5, gx.iter().chain(gu.iter()).copied())
    }

    fn cost_hessian(&self, _k: usize, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(5, 5);
        h.view_mut((0, 0), (3, 3)).copy_from(&(2.0 * &self.q));
        h.view_mut((3, 3), (2, 2)).copy_from(&(2.0 * &self.r));
        h
    }

    fn constraint(&self, _k: usize, i: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        self.constraints[i].value(x, u)
    }

    fn constraint_gradient(&self, _k: usize, i: usize, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.constraints[i].gradient(x, u, 3, 2)
    }

    fn constraint_hessian(&self, _k: usize, i: usize, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        self.constraints[i].hessian(3, 2)
    }
}
