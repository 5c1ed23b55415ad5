//! Oracles shared by the integration tests. None of them calls the
//! derivative or penalty code under test.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use ocp_fbde::model::{ControlSequence, SystemModel};
use ocp_fbde::penalty::PenaltyState;

pub fn repo_file(rel: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

/// Minimizer and minimum of `Σ_{k=0}^{N} (x_k - r)ᵀQ(x_k - r) + u_kᵀRu_k`
/// subject to `x_{k+1} = A x_k + B u_k`, by writing the states as an affine
/// function of the stacked controls and solving the normal equations.
pub fn batch_lti_optimum(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    x_ref: &DVector<f64>,
    x0: &DVector<f64>,
    horizon: usize,
) -> (DVector<f64>, f64) {
    let (n, m) = b.shape();
    let steps = horizon + 1;
    // states x_0..x_N = phi + gamma u
    let mut phi = DVector::zeros(n * steps);
    let mut gamma = DMatrix::zeros(n * steps, m * steps);
    let mut x = x0.clone();
    for k in 0..steps {
        phi.rows_mut(k * n, n).copy_from(&x);
        x = a * &x;
    }
    for k in 1..steps {
        for j in 0..k {
            let mut block = b.clone();
            for _ in 0..(k - 1 - j) {
                block = a * block;
            }
            gamma.view_mut((k * n, j * m), (n, m)).copy_from(&block);
        }
    }
    let qbar = DMatrix::from_fn(n * steps, n * steps, |i, j| if i / n == j / n { q[(i % n, j % n)] } else { 0.0 });
    let rbar = DMatrix::from_fn(m * steps, m * steps, |i, j| if i / m == j / m { r[(i % m, j % m)] } else { 0.0 });
    let rref = DVector::from_fn(n * steps, |i, _| x_ref[i % n]);
    let offset = &phi - &rref;
    let lhs = gamma.transpose() * &qbar * &gamma + &rbar;
    let rhs = -(gamma.transpose() * &qbar * &offset);
    let u = lhs.cholesky().expect("positive definite").solve(&rhs);
    let e = &offset + &gamma * &u;
    let cost = (e.transpose() * &qbar * &e)[0] + (u.transpose() * &rbar * &u)[0];
    (u, cost)
}

/// Augmented cost written out directly:
/// `Σ_k L(x_k,u_k) + Σ_i (1/2σ)[max(0, γ_ik + σ c_i)² − γ_ik²]`.
pub fn augmented_cost<M: SystemModel + ?Sized>(
    model: &M,
    x0: &DVector<f64>,
    u: &ControlSequence,
    penalty: &PenaltyState,
) -> f64 {
    let sigma = penalty.sigma();
    let l = model.dims().l;
    let mut x = x0.clone();
    let mut total = 0.0;
    for k in 0..=u.horizon() {
        let uk = u.block(k);
        total += model.running_cost(k, &x, &uk);
        for i in 0..l {
            let g = penalty.multipliers().get(i, k);
            let s = (g + sigma * model.constraint(k, i, &x, &uk)).max(0.0);
            total += (s * s - g * g) / (2.0 * sigma);
        }
        x = model.dynamics(k, &x, &uk);
    }
    total
}

/// Central differences of `f` at `u` with step `h`.
pub fn central_gradient(u: &ControlSequence, h: f64, f: impl Fn(&ControlSequence) -> f64) -> DVector<f64> {
    let mut probe = u.clone();
    DVector::from_fn(u.stacked().len(), |c, _| {
        let base = u.stacked()[c];
        probe.stacked_mut()[c] = base + h;
        let plus = f(&probe);
        probe.stacked_mut()[c] = base - h;
        let minus = f(&probe);
        probe.stacked_mut()[c] = base;
        (plus - minus) / (2.0 * h)
    })
}

/// Central differences of a vector-valued `g`; column `c` is `∂g/∂u_c`.
pub fn central_jacobian(u: &ControlSequence, h: f64, g: impl Fn(&ControlSequence) -> DVector<f64>) -> DMatrix<f64> {
    let dim = u.stacked().len();
    let mut probe = u.clone();
    let mut out = DMatrix::zeros(dim, dim);
    for c in 0..dim {
        let base = u.stacked()[c];
        probe.stacked_mut()[c] = base + h;
        let plus = g(&probe);
        probe.stacked_mut()[c] = base - h;
        let minus = g(&probe);
        probe.stacked_mut()[c] = base;
        out.set_column(c, &((plus - minus) / (2.0 * h)));
    }
    out
}

/// `max|a - b| / max(1, max|b|)`.
pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}

pub fn rel_err_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}
