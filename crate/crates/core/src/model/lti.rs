use nalgebra::{DMatrix, DVector};

use super::{Constraint, Dims, SystemModel};
use crate::error::{OcpError, Result};

/// `x⁺ = A x + B u` with cost `(x - x_ref)ᵀ Q (x - x_ref) + uᵀ R u` at every step.
#[derive(Debug, Clone)]
pub struct LtiModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    x_ref: DVector<f64>,
    constraints: Vec<Constraint>,
}

pub fn make_lti_model(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    x_ref: &DVector<f64>,
) -> Result<LtiModel> {
    let n = a.nrows();
    let m = b.ncols();
    Dims::new(n, m, 0)?;
    if a.shape() != (n, n) || b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) || x_ref.len() != n {
        return Err(OcpError::invalid(format!(
            "inconsistent LTI shapes: A {:?}, B {:?}, Q {:?}, R {:?}, x_ref {}",
            a.shape(),
            b.shape(),
            q.shape(),
            r.shape(),
            x_ref.len()
        )));
    }
    let sym_tol = |w: &DMatrix<f64>| 1e-12 * (1.0 + w.amax());
    if (q - q.transpose()).amax() > sym_tol(q) || (r - r.transpose()).amax() > sym_tol(r) {
        return Err(OcpError::invalid("Q and R must be symmetric"));
    }
    let q_min = q.clone().symmetric_eigenvalues().min();
    if q_min < -sym_tol(q) {
        return Err(OcpError::invalid("Q must be positive semi-definite"));
    }
    if r.clone().cholesky().is_none() {
        return Err(OcpError::invalid("R must be positive definite"));
    }
    Ok(LtiModel {
        a: a.clone(),
        b: b.clone(),
        q: q.clone(),
        r: r.clone(),
        x_ref: x_ref.clone(),
        constraints: Vec::new(),
    })
}

impl LtiModel {
    pub fn with_constraints(mut self, constraints: Vec<Constraint>) -> Result<Self> {
        let (n, m) = (self.a.nrows(), self.b.ncols());
        for c in &constraints {
            c.validate(n, m)?;
        }
        self.constraints = constraints;
        Ok(self)
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn x_ref(&self) -> &DVector<f64> {
        &self.x_ref
    }
}

impl SystemModel for LtiModel {
    fn dims(&self) -> Dims {
        Dims {
            n: self.a.nrows(),
            m: self.b.ncols(),
            l: self.constraints.len(),
        }
    }

    fn dynamics(&self, _k: usize, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }

    fn dynamics_jacobian(&self, _k: usize, _x: &DVector<f64>, _u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        (self.a.clone(), self.b.clone())
    }

    fn dynamics_curvature(&self, _k: usize, x: &DVector<f64>, u: &DVector<f64>, _w: &DVector<f64>) -> DMatrix<f64> {
        let d = x.len() + u.len();
        DMatrix::zeros(d, d)
    }

    fn running_cost(&self, _k: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let e = x - &self.x_ref;
        (e.transpose() * &self.q * &e)[0] + (u.transpose() * &self.r * u)[0]
    }

    fn cost_gradient(&self, _k: usize, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let gx = (&self.q + self.q.transpose()) * (x - &self.x_ref);
        let gu = (&self.r + self.r.transpose()) * u;
        DVector::from_iterator(gx.len() + gu.len(), gx.iter().chain(gu.iter()).copied())
    }

    fn cost_hessian(&self, _k: usize, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        let (n, m) = (self.a.nrows(), self.b.ncols());
        let mut h = DMatrix::zeros(n + m, n + m);
        h.view_mut((0, 0), (n, n)).copy_from(&(&self.q + self.q.transpose()));
        h.view_mut((n, n), (m, m)).copy_from(&(&self.r + self.r.transpose()));
        h
    }

    fn constraint(&self, _k: usize, i: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        self.constraints[i].value(x, u)
    }

    fn constraint_gradient(&self, _k: usize, i: usize, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.constraints[i].gradient(x, u, self.a.nrows(), self.b.ncols())
    }

    fn constraint_hessian(&self, _k: usize, i: usize, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        self.constraints[i].hessian(self.a.nrows(), self.b.ncols())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_shapes() {
        let a = DMatrix::identity(2, 2);
        let b = DMatrix::zeros(3, 1);
        let err = make_lti_model(&a, &b, &a, &DMatrix::identity(1, 1), &DVector::zeros(2)).unwrap_err();
        assert!(matches!(err, OcpError::InvalidArgument(_)));
    }

    #[test]
    fn rejects_singular_control_weight() {
        let a = DMatrix::identity(1, 1);
        let err = make_lti_model(&a, &a, &a, &DMatrix::zeros(1, 1), &DVector::zeros(1)).unwrap_err();
        assert!(matches!(err, OcpError::InvalidArgument(_)));
    }
}
