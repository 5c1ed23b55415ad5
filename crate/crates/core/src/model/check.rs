use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{split_joint, SystemModel};

const STEP: f64 = 1e-3;
const TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockCheck {
    pub name: String,
    pub max_rel_error: f64,
}

/// Worst relative error of each derivative block against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeReport {
    pub samples: usize,
    pub tolerance: f64,
    pub blocks: Vec<BlockCheck>,
}

impl DerivativeReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.max_rel_error <= self.tolerance)
    }

    pub fn failures(&self) -> impl Iterator<Item = &BlockCheck> {
        self.blocks.iter().filter(|b| b.max_rel_error > self.tolerance)
    }

    pub fn worst(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }

    fn record(&mut self, name: &str, err: f64) {
        match self.blocks.iter_mut().find(|b| b.name == name) {
            Some(b) => b.max_rel_error = b.max_rel_error.max(err),
            None => self.blocks.push(BlockCheck {
                name: name.to_owned(),
                max_rel_error: err,
            }),
        }
    }
}

fn rel_err(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) -> f64 {
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Central-difference Jacobian of `func` at `z`, one column per coordinate.
fn fd_jacobian(z: &DVector<f64>, rows: usize, func: impl Fn(&DVector<f64>) -> DVector<f64>) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(rows, z.len());
    let mut zp = z.clone();
    for c in 0..z.len() {
        zp[c] = z[c] + STEP;
        let plus = func(&zp);
        zp[c] = z[c] - STEP;
        let minus = func(&zp);
        zp[c] = z[c];
        jac.set_column(c, &((plus - minus) / (2.0 * STEP)));
    }
    jac
}

/// Compares every analytic derivative the model exposes with central finite
/// differences at `samples` random points `(x, u) ∈ [-1, 1]^{n+m}`.
pub fn self_check_derivatives<M: SystemModel + ?Sized>(model: &M, samples: usize, seed: u64) -> DerivativeReport {
    let dims = model.dims();
    let (n, m) = (dims.n, dims.m);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = DerivativeReport {
        samples,
        tolerance: TOLERANCE,
        blocks: Vec::new(),
    };

    for s in 0..samples.max(1) {
        let k = s % 4;
        let z = DVector::from_fn(n + m, |_, _| rng.gen_range(-1.0..1.0));
        let w = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let (x, u) = split_joint(&z, n);
        let at = |z: &DVector<f64>| split_joint(z, n);

        let (fx, fu) = model.dynamics_jacobian(k, &x, &u);
        let jf = fd_jacobian(&z, n, |z| {
            let (x, u) = at(z);
            model.dynamics(k, &x, &u)
        });
        report.record("f_x", rel_err(&fx, &jf.columns(0, n).into_owned()));
        report.record("f_u", rel_err(&fu, &jf.columns(n, m).into_owned()));

        let curvature = model.dynamics_curvature(k, &x, &u, &w);
        let jw = fd_jacobian(&z, n + m, |z| {
            let (x, u) = at(z);
            let (fx, fu) = model.dynamics_jacobian(k, &x, &u);
            let gx = fx.tr_mul(&w);
            let gu = fu.tr_mul(&w);
            DVector::from_iterator(n + m, gx.iter().chain(gu.iter()).copied())
        });
        report.record("w.f_zz", rel_err(&curvature, &jw));
        report.record("w.f_zz symmetry", (&curvature - curvature.transpose()).amax());

        let grad = model.cost_gradient(k, &x, &u);
        let jl = fd_jacobian(&z, 1, |z| {
            let (x, u) = at(z);
            DVector::from_element(1, model.running_cost(k, &x, &u))
        });
        report.record("L_z", rel_err(&DMatrix::from_row_slice(1, n + m, grad.as_slice()), &jl));
        let hess = model.cost_hessian(k, &x, &u);
        let jg = fd_jacobian(&z, n + m, |z| {
            let (x, u) = at(z);
            model.cost_gradient(k, &x, &u)
        });
        report.record("L_zz", rel_err(&hess, &jg));
        report.record("L_zz symmetry", (&hess - hess.transpose()).amax());

        for i in 0..dims.l {
            let cg = model.constraint_gradient(k, i, &x, &u);
            let jc = fd_jacobian(&z, 1, |z| {
                let (x, u) = at(z);
                DVector::from_element(1, model.constraint(k, i, &x, &u))
            });
            report.record(&format!("c{i}_z"), rel_err(&DMatrix::from_row_slice(1, n + m, cg.as_slice()), &jc));
            let ch = model.constraint_hessian(k, i, &x, &u);
            let jcg = fd_jacobian(&z, n + m, |z| {
                let (x, u) = at(z);
                model.constraint_gradient(k, i, &x, &u)
            });
            report.record(&format!("c{i}_zz"), rel_err(&ch, &jcg));
            report.record(&format!("c{i}_zz symmetry"), (&ch - ch.transpose()).amax());
        }
    }
    report
}
