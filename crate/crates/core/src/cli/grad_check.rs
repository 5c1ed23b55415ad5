//! Randomized comparison of the costate gradient and Hessian against central
//! differences.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use super::scenario::{BuiltModel, Scenario};
use crate::error::Result;
use crate::fbde::{
    asymmetry, fd_gradient, fd_hessian, gradient, gradient_fd_step, hessian, hessian_fd_step, hessian_unsymmetrized,
    RowMode,
};
use crate::model::{rollout, ControlSequence, SystemModel};
use crate::penalty::{AugmentedProblem, MultiplierTable, PenaltyState};

pub const GRADIENT_TOL: f64 = 1e-6;
pub const HESSIAN_TOL: f64 = 1e-5;
/// Relative to `1 + ‖H‖_max`.
pub const SYMMETRY_TOL: f64 = 1e-8;

const SIGMA: f64 = 10.0;
const GAMMA_MAX: f64 = 2.0;
/// Smallest `|γ + σc|` accepted, so no difference stencil straddles a kink.
const KINK_MARGIN: f64 = 0.1;
const STATE_NOISE: f64 = 0.3;
const CONTROL_NOISE: f64 = 0.3;

/// A randomly perturbed subproblem with active penalty terms.
#[derive(Debug, Clone)]
pub struct Instance {
    pub model: BuiltModel,
    pub x0: DVector<f64>,
    pub u: ControlSequence,
    pub penalty: PenaltyState,
}

impl Instance {
    pub fn problem(&self) -> Result<AugmentedProblem<'_, BuiltModel>> {
        AugmentedProblem::new(&self.model, self.x0.clone(), self.u.horizon(), self.penalty.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleCheck {
    pub sample: usize,
    pub gradient_rel_error: f64,
    pub hessian_rel_error: f64,
    pub asymmetry: f64,
    pub active_terms: usize,
    pub passed: bool,
}

/// Draws a window of the scenario over its prediction horizon, perturbs the
/// start state and the reference controls, and picks multipliers away from
/// the penalty kinks.
pub fn random_instance<R: Rng>(scenario: &Scenario, base: &BuiltModel, rng: &mut R) -> Result<Instance> {
    let np = scenario.prediction_horizon;
    let last_offset = scenario.horizon.saturating_sub(np);
    let offset = rng.gen_range(0..=last_offset);
    let model = base.window(offset);
    let mut x0 = model.reference_state(0).unwrap_or_else(|| scenario.x0());
    x0.iter_mut().for_each(|v| *v += rng.gen_range(-STATE_NOISE..STATE_NOISE));
    let mut u = match &model {
        BuiltModel::Agv(agv) => agv.reference_controls(np),
        BuiltModel::Lti(m) => ControlSequence::zeros(m.b().ncols(), np),
    };
    u.stacked_mut()
        .iter_mut()
        .for_each(|v| *v += rng.gen_range(-CONTROL_NOISE..CONTROL_NOISE));

    let x = rollout(&model, &x0, &u)?;
    let l = model.dims().l;
    let gamma = DMatrix::from_fn(l, np + 1, |i, k| {
        let c = model.constraint(k, i, x.state(k), &u.block(k));
        let mut g = 0.0;
        for _ in 0..64 {
            g = rng.gen_range(0.0..GAMMA_MAX);
            if (g + SIGMA * c).abs() > KINK_MARGIN {
                break;
            }
        }
        g
    });
    let penalty = PenaltyState::new(SIGMA, MultiplierTable::from_matrix(gamma)?)?;
    Ok(Instance { model, x0, u, penalty })
}

fn rel_error(a: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    (a - reference).amax() / reference.amax().max(1.0)
}

/// Number of `(i, k)` pairs where the penalty is on its quadratic branch.
pub fn active_terms(inst: &Instance) -> Result<usize> {
    let x = rollout(&inst.model, &inst.x0, &inst.u)?;
    let l = inst.model.dims().l;
    let mut count = 0;
    for k in 0..=inst.u.horizon() {
        for i in 0..l {
            let c = inst.model.constraint(k, i, x.state(k), &inst.u.block(k));
            if inst.penalty.multipliers().get(i, k) + inst.penalty.sigma() * c > 0.0 {
                count += 1;
            }
        }
    }
    Ok(count)
}

pub fn check_instance(sample: usize, inst: &Instance, mode: RowMode) -> Result<SampleCheck> {
    let ap = inst.problem()?;
    let first = gradient(&ap, &inst.u)?;
    let g_fd = fd_gradient(&ap, &inst.u, gradient_fd_step(&inst.u))?;
    let g = DMatrix::from_column_slice(g_fd.len(), 1, first.gradient.as_slice());
    let g_fd = DMatrix::from_column_slice(g_fd.len(), 1, g_fd.as_slice());
    let gradient_rel_error = rel_error(&g, &g_fd);

    let h = hessian(&ap, &inst.u, Some((&first.trajectory, &first.costates)), mode)?;
    let h_fd = fd_hessian(&ap, &inst.u, hessian_fd_step(&inst.u))?;
    let hessian_rel_error = rel_error(&h, &h_fd);
    let raw = hessian_unsymmetrized(&ap, &inst.u, None, mode)?;
    let asym = asymmetry(&raw) / (1.0 + raw.amax());

    Ok(SampleCheck {
        sample,
        gradient_rel_error,
        hessian_rel_error,
        asymmetry: asym,
        active_terms: active_terms(inst)?,
        passed: gradient_rel_error <= GRADIENT_TOL && hessian_rel_error <= HESSIAN_TOL && asym <= SYMMETRY_TOL,
    })
}
