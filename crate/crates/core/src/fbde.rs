//! Exact first and second derivatives of the augmented cost with respect to
//! the stacked controls, obtained by solving forward-backward difference
//! equations.
//!
//! With the stage Hamiltonian `H(k) = L̃(x_k, u_k) + λ_{k+1}ᵀ f(x_k, u_k)`
//! (`L̃` the augmented running cost), the costates run backward as
//! `λ_k = ∂H(k)/∂x_k`, `λ_{N+1} = 0`, and gradient block `k` is `∂H(k)/∂u_k`.
//!
//! Hessian row `(j, p)` is the gradient of the scalar `∂H(j)/∂u_{j,p}`
//! under both the state recursion and the costate recursion. Its adjoint
//! pair is a forward sweep
//!
//! ```text
//! μ_0 = 0,      μ_{k+1} = A_k μ_k + [k = j] B_j e_p
//! ```
//!
//! followed by a backward sweep
//!
//! ```text
//! η_{N+1} = 0,  η_k = A_kᵀ η_{k+1} + H_xx(k) μ_k + [k = j] H_ux(j)ᵀ e_p
//! ```
//!
//! and the row block at step `k` is
//! `B_kᵀ η_{k+1} + H_ux(k) μ_k + [k = j] H_uu(j) e_p`, where `A = ∂f/∂x`,
//! `B = ∂f/∂u` and the `H_..` blocks are second derivatives of `H(k)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_finite_vec, OcpError, Result};
use crate::model::{rollout, ControlSequence, StateTrajectory, SystemModel};
use crate::penalty::AugmentedProblem;

/// Stacked gradient, block `k` of length `m` is `∂H(k)/∂u_k`.
pub type GradientVector = DVector<f64>;

/// Dense `(N+1)m × (N+1)m` Hessian of the augmented cost.
pub type HessianMatrix = DMatrix<f64>;

/// How Hessian rows are scheduled. Both modes give bit-identical matrices.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowMode {
    #[default]
    Sequential,
    /// Rows are spread over the current rayon pool.
    Parallel,
}

/// Costates `λ_1..λ_{N+1}` with `λ_{N+1} = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostateSequence {
    // lambda[i] holds λ_{i+1}
    lambda: Vec<DVector<f64>>,
}

impl CostateSequence {
    /// `λ_k` for `1 <= k <= N+1`.
    pub fn get(&self, k: usize) -> &DVector<f64> {
        assert!(k >= 1, "costates are indexed from 1");
        &self.lambda[k - 1]
    }

    /// `λ_{k+1}`, the costate paired with stage `k`.
    pub fn after(&self, k: usize) -> &DVector<f64> {
        &self.lambda[k]
    }

    pub fn horizon(&self) -> usize {
        self.lambda.len() - 1
    }
}

/// Result of one gradient evaluation; trajectory and costates are kept for
/// the Hessian at the same controls.
#[derive(Debug, Clone)]
pub struct FirstOrder {
    pub gradient: GradientVector,
    pub trajectory: StateTrajectory,
    pub costates: CostateSequence,
    pub cost: f64,
}

/// `H(k) = L̃(x, u) + λ_{k+1}ᵀ f(x, u)`.
pub fn hamiltonian<M: SystemModel + ?Sized>(
    ap: &AugmentedProblem<'_, M>,
    k: usize,
    x: &DVector<f64>,
    u: &DVector<f64>,
    lambda_next: &DVector<f64>,
) -> Result<f64> {
    let dims = ap.model().dims();
    if x.len() != dims.n || u.len() != dims.m || lambda_next.len() != dims.n {
        return Err(OcpError::invalid("hamiltonian arguments do not match model dimensions"));
    }
    Ok(ap.augmented_running_cost(k, x, u) + lambda_next.dot(&ap.model().dynamics(k, x, u)))
}

/// Backward sweep; fills gradient blocks into `grad` when given.
fn sweep<M: SystemModel + ?Sized>(
    ap: &AugmentedProblem<'_, M>,
    x: &StateTrajectory,
    u: &ControlSequence,
    mut grad: Option<&mut DVector<f64>>,
) -> Result<CostateSequence> {
    let n = ap.model().dims().n;
    let m = ap.model().dims().m;
    let horizon = ap.horizon();
    let mut lambda = vec![DVector::zeros(n); horizon + 1];
    for k in (0..=horizon).rev() {
        let uk = u.block(k);
        let xk = x.state(k);
        let gz = ap.augmented_cost_gradient(k, xk, &uk);
        let (fx, fu) = ap.model().dynamics_jacobian(k, xk, &uk);
        let next = &lambda[k];
        if let Some(g) = grad.as_deref_mut() {
            let mut block = gz.rows(n, m).into_owned();
            block.gemv_tr(1.0, &fu, next, 1.0);
            check_finite_vec(&block, "gradient", k)?;
            g.rows_mut(k * m, m).copy_from(&block);
        }
        if k >= 1 {
            let mut lk = gz.rows(0, n).into_owned();
            lk.gemv_tr(1.0, &fx, next, 1.0);
            check_finite_vec(&lk, "costate sweep", k)?;
            lambda[k - 1] = lk;
        }
    }
    Ok(CostateSequence { lambda })
}

/// `λ_{N+1} = 0`, `λ_k = ∂L̃/∂x_k + (∂f/∂x_k)ᵀ λ_{k+1}` for `k = N..1`.
pub fn costate_sweep<M: SystemModel + ?Sized>(
    ap: &AugmentedProblem<'_, M>,
    x: &StateTrajectory,
    u: &ControlSequence,
) -> Result<CostateSequence> {
    ap.check_controls(u)?;
    if x.horizon() != ap.horizon() {
        return Err(OcpError::invalid("trajectory horizon does not match the problem"));
    }
    sweep(ap, x, u, None)
}

/// Rollout, costate sweep and gradient blocks `∂H(k)/∂u_k`.
pub fn gradient<M: SystemModel + ?Sized>(ap: &AugmentedProblem<'_, M>, u: &ControlSequence) -> Result<FirstOrder> {
    ap.check_controls(u)?;
    let trajectory = rollout(ap.model(), ap.x0(), u)?;
    let cost = ap.total_cost_along(&trajectory, u)?;
    let mut g = DVector::zeros(u.stacked().len());
    let costates = sweep(ap, &trajectory, u, Some(&mut g))?;
    Ok(FirstOrder {
        gradient: g,
        trajectory,
        costates,
        cost,
    })
}

/// Per-step Jacobians and Hamiltonian second derivatives shared by all rows.
struct StageCurvature {
    n: usize,
    m: usize,
    a: Vec<DMatrix<f64>>,
    b: Vec<DMatrix<f64>>,
    hxx: Vec<DMatrix<f64>>,
    hux: Vec<DMatrix<f64>>,
    huu: Vec<DMatrix<f64>>,
}

impl StageCurvature {
    fn assemble<M: SystemModel + ?Sized>(
        ap: &AugmentedProblem<'_, M>,
        x: &StateTrajectory,
        lam: &CostateSequence,
        u: &ControlSequence,
    ) -> Self {
        let dims = ap.model().dims();
        let (n, m) = (dims.n, dims.m);
        let steps = ap.horizon() + 1;
        let mut out = StageCurvature {
            n,
            m,
            a: Vec::with_capacity(steps),
            b: Vec::with_capacity(steps),
            hxx: Vec::with_capacity(steps),
            hux: Vec::with_capacity(steps),
            huu: Vec::with_capacity(steps),
        };
        for k in 0..steps {
            let uk = u.block(k);
            let xk = x.state(k);
            let (fx, fu) = ap.model().dynamics_jacobian(k, xk, &uk);
            let (_, mut hzz) = ap.augmented_cost_derivatives(k, xk, &uk);
            hzz += ap.model().dynamics_curvature(k, xk, &uk, lam.after(k));
            out.hxx.push(hzz.view((0, 0), (n, n)).into_owned());
            out.hux.push(hzz.view((n, 0), (m, n)).into_owned());
            out.huu.push(hzz.view((n, n), (m, m)).into_owned());
            out.a.push(fx);
            out.b.push(fu);
        }
        out
    }

    fn horizon(&self) -> usize {
        self.a.len() - 1
    }

    /// Row `j·m + p` of the Hessian.
    fn row(&self, j: usize, p: usize) -> Result<DVector<f64>> {
        let (n, m) = (self.n, self.m);
        let horizon = self.horizon();
        let row_index = j * m + p;

        // Forward sweep: μ_k = 0 for k <= j.
        // Column k holds μ_k.
        let mut mu = DMatrix::zeros(n, horizon + 1);
        if j < horizon {
            mu.column_mut(j + 1).copy_from(&self.b[j].column(p));
            for k in j + 1..horizon {
                let (head, mut tail) = mu.columns_range_pair_mut(k, k + 1);
                tail.gemv(1.0, &self.a[k], &head, 0.0);
            }
        }

        let mut row = DVector::zeros((horizon + 1) * m);
        let mut eta_next = DVector::zeros(n);
        let mut eta = DVector::zeros(n);
        let mut block = DVector::zeros(m);
        for k in (0..=horizon).rev() {
            block.gemv_tr(1.0, &self.b[k], &eta_next, 0.0);
            if k > j {
                block.gemv(1.0, &self.hux[k], &mu.column(k), 1.0);
            } else if k == j {
                block += self.huu[j].row(p).transpose();
            }
            if block.iter().any(|v| !v.is_finite()) {
                return Err(OcpError::HessianDivergence { row: row_index, step: k });
            }
            row.rows_mut(k * m, m).copy_from(&block);

            if k == 0 {
                break;
            }
            eta.gemv_tr(1.0, &self.a[k], &eta_next, 0.0);
            if k > j {
                eta.gemv(1.0, &self.hxx[k], &mu.column(k), 1.0);
            } else if k == j {
                eta += self.hux[j].row(p).transpose();
            }
            std::mem::swap(&mut eta, &mut eta_next);
        }
        Ok(row)
    }

    fn rows(&self, mode: RowMode) -> Result<DMatrix<f64>> {
        let m = self.m;
        let dim = (self.horizon() + 1) * m;
        let compute = |r: usize| self.row(r / m, r % m);
        let rows: Vec<DVector<f64>> = match mode {
            RowMode::Sequential => (0..dim).map(compute).collect::<Result<_>>()?,
            RowMode::Parallel => (0..dim).into_par_iter().map(compute).collect::<Result<_>>()?,
        };
        let mut h = DMatrix::zeros(dim, dim);
        for (r, row) in rows.iter().enumerate() {
            h.set_row(r, &row.transpose());
        }
        Ok(h)
    }
}

fn check_second_order_inputs<M: SystemModel + ?Sized>(
    ap: &AugmentedProblem<'_, M>,
    x: &StateTrajectory,
    lam: &CostateSequence,
    u: &ControlSequence,
) -> Result<()> {
    ap.check_controls(u)?;
    if x.horizon() != ap.horizon() || lam.horizon() != ap.horizon() {
        return Err(OcpError::invalid("trajectory or costates do not match the problem horizon"));
    }
    Ok(())
}

/// Row `(j, p)` of the Hessian, i.e. the gradient of `∂H(j)/∂u_{j,p}` over all controls.
pub fn hessian_row<M: SystemModel + ?Sized>(
    ap: &AugmentedProblem<'_, M>,
    x: &StateTrajectory,
    lam: &CostateSequence,
    u: &ControlSequence,
    j: usize,
    p: usize,
) -> Result<DVector<f64>> {
    check_second_order_inputs(ap, x, lam, u)?;
    if j > ap.horizon() || p >= u.m() {
        return Err(OcpError::invalid(format!("Hessian row ({j}, {p}) out of range")));
    }
    StageCurvature::assemble(ap, x, lam, u).row(j, p)
}

/// All rows stacked as computed, before symmetrization.
pub fn hessian_unsymmetrized<M: SystemModel + ?Sized>(
    ap: &AugmentedProblem<'_, M>,
    u: &ControlSequence,
    reuse: Option<(&StateTrajectory, &CostateSequence)>,
    mode: RowMode,
) -> Result<HessianMatrix> {
    let owned;
    let (x, lam) = match reuse {
        Some(pair) => pair,
        None => {
            let first = gradient(ap, u)?;
            owned = (first.trajectory, first.costates);
            (&owned.0, &owned.1)
        }
    };
    check_second_order_inputs(ap, x, lam, u)?;
    StageCurvature::assemble(ap, x, lam, u).rows(mode)
}

/// Hessian of the augmented cost, symmetrized as `(H + Hᵀ)/2`.
pub fn hessian<M: SystemModel + ?Sized>(
    ap: &AugmentedProblem<'_, M>,
    u: &ControlSequence,
    reuse: Option<(&StateTrajectory, &CostateSequence)>,
    mode: RowMode,
) -> Result<HessianMatrix> {
    let h = hessian_unsymmetrized(ap, u, reuse, mode)?;
    Ok(symmetrize(h))
}

pub fn symmetrize(h: DMatrix<f64>) -> DMatrix<f64> {
    let ht = h.transpose();
    (h + ht) * 0.5
}

/// `‖H − Hᵀ‖_max`.
pub fn asymmetry(h: &DMatrix<f64>) -> f64 {
    (h - h.transpose()).amax()
}

/// Central-difference step for [`fd_gradient`]: `1e-6·(1 + ‖u‖_max)`.
pub fn gradient_fd_step(u: &ControlSequence) -> f64 {
    1e-6 * (1.0 + u.stacked().amax())
}

/// Central-difference step for [`fd_hessian`]: `1e-4·(1 + ‖u‖_max)`.
pub fn hessian_fd_step(u: &ControlSequence) -> f64 {
    1e-4 * (1.0 + u.stacked().amax())
}

/// Central differences of the augmented total cost, one stacked coordinate at a time.
pub fn fd_gradient<M: SystemModel + ?Sized>(
    ap: &AugmentedProblem<'_, M>,
    u: &ControlSequence,
    h: f64,
) -> Result<GradientVector> {
    if h <= 0.0 {
        return Err(OcpError::invalid("finite-difference step must be positive"));
    }
    let mut probe = u.clone();
    let mut g = DVector::zeros(u.stacked().len());
    for c in 0..g.len() {
        let base = u.stacked()[c];
        probe.stacked_mut()[c] = base + h;
        let plus = ap.total_cost(&probe)?;
        probe.stacked_mut()[c] = base - h;
        let minus = ap.total_cost(&probe)?;
        probe.stacked_mut()[c] = base;
        g[c] = (plus - minus) / (2.0 * h);
    }
    Ok(g)
}

/// Central differences of [`gradient`]; column `c` is `∂g/∂u_c`. Not symmetrized.
pub fn fd_hessian<M: SystemModel + ?Sized>(
    ap: &AugmentedProblem<'_, M>,
    u: &ControlSequence,
    h: f64,
) -> Result<HessianMatrix> {
    if h <= 0.0 {
        return Err(OcpError::invalid("finite-difference step must be positive"));
    }
    let dim = u.stacked().len();
    let mut probe = u.clone();
    let mut out = DMatrix::zeros(dim, dim);
    for c in 0..dim {
        let base = u.stacked()[c];
        probe.stacked_mut()[c] = base + h;
        let plus = gradient(ap, &probe)?.gradient;
        probe.stacked_mut()[c] = base - h;
        let minus = gradient(ap, &probe)?.gradient;
        probe.stacked_mut()[c] = base;
        out.set_column(c, &((plus - minus) / (2.0 * h)));
    }
    Ok(out)
}
