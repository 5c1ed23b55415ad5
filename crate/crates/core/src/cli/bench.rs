//! Timing and iteration-count measurements.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::scenario::{BuiltModel, Scenario};
use crate::error::{OcpError, Result};
use crate::fbde::{gradient, hessian, RowMode};
use crate::model::{ControlSequence, SystemModel};
use crate::mpc::run_mpc_from;
use crate::penalty::{AugmentedProblem, PenaltyState};
use crate::solver::{solve_msa_baseline, solve_subproblem};

pub const SIZES: [usize; 3] = [40, 80, 160];
const CONTROL_NOISE: f64 = 0.1;
const MSA_MAX_ITERS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeTiming {
    pub n: usize,
    /// Fastest of the repeats.
    pub gradient_s: f64,
    pub hessian_s: f64,
    pub subproblem_s: f64,
    pub subproblem_iterations: usize,
    /// Mean over the repeats.
    pub mpc_total_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ratios {
    pub gradient: f64,
    pub hessian: f64,
    pub subproblem: f64,
    pub mpc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MsaComparison {
    pub step: f64,
    pub grad_tol: f64,
    pub solver_iterations: usize,
    pub msa_iterations: usize,
    pub msa_converged: bool,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub repeat: usize,
    pub threads: usize,
    pub sizes: Vec<SizeTiming>,
    /// Time at the largest size over time at the middle one.
    pub ratios_160_80: Ratios,
    pub msa: MsaComparison,
}

/// Smallest wall time of `repeat` calls.
pub fn time_min(repeat: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    let mut best = f64::INFINITY;
    for _ in 0..repeat.max(1) {
        let start = Instant::now();
        f()?;
        best = best.min(start.elapsed().as_secs_f64());
    }
    Ok(best)
}

/// Full-horizon problem at horizon `n` around the scenario's first guess,
/// perturbed with seeded noise.
pub fn scaling_problem(scenario: &Scenario, n: usize, seed: u64) -> Result<(BuiltModel, ControlSequence)> {
    let model = scenario.solve_model(n)?;
    let mut u = scenario.initial_controls(&model, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    u.stacked_mut()
        .iter_mut()
        .for_each(|v| *v += rng.gen_range(-CONTROL_NOISE..CONTROL_NOISE));
    Ok((model, u))
}

/// Gradient and Hessian times at horizon `n`.
pub fn derivative_times(scenario: &Scenario, n: usize, repeat: usize, mode: RowMode, seed: u64) -> Result<(f64, f64)> {
    let (model, u) = scaling_problem(scenario, n, seed)?;
    let ap = penalized(scenario, &model, n)?;
    let g = time_min(repeat, || gradient(&ap, &u).map(|_| ()))?;
    let h = time_min(repeat, || {
        let first = gradient(&ap, &u)?;
        hessian(&ap, &u, Some((&first.trajectory, &first.costates)), mode).map(|_| ())
    })?;
    Ok((g, h))
}

fn penalized<'a>(scenario: &Scenario, model: &'a BuiltModel, n: usize) -> Result<AugmentedProblem<'a, BuiltModel>> {
    let penalty = PenaltyState::initial(scenario.alm.sigma1, model.dims().l, n)?;
    AugmentedProblem::new(model, scenario.x0(), n, penalty)
}

pub fn measure_size(scenario: &Scenario, n: usize, repeat: usize, mode: RowMode, seed: u64) -> Result<SizeTiming> {
    let (gradient_s, hessian_s) = derivative_times(scenario, n, repeat, mode, seed)?;
    let (model, u) = scaling_problem(scenario, n, seed)?;
    let ap = penalized(scenario, &model, n)?;
    let mut solver = scenario.solver;
    solver.row_mode = mode;
    let mut iterations = 0;
    let subproblem_s = time_min(repeat, || {
        iterations = solve_subproblem(&ap, &u, &solver)?.iterations;
        Ok(())
    })?;

    let mut cfg = scenario.mpc_config();
    cfg.n_steps = n;
    cfg.alm.solver.row_mode = mode;
    let mpc_total_s = if cfg.np <= n {
        let u0 = scenario.initial_controls(&model, cfg.np);
        let mut total = 0.0;
        for _ in 0..repeat.max(1) {
            let run = run_mpc_from(|k| Ok(model.window(k)), &scenario.x0(), &u0, &cfg)?;
            total += run.total_solve_time().as_secs_f64();
        }
        Some(total / repeat.max(1) as f64)
    } else {
        None
    };
    Ok(SizeTiming {
        n,
        gradient_s,
        hessian_s,
        subproblem_s,
        subproblem_iterations: iterations,
        mpc_total_s,
    })
}

/// Iterations of the regularized solver and of fixed-step descent with step
/// `1/λ_max(H(u_0))` on the first subproblem of the run, started from zero
/// controls.
pub fn msa_comparison(scenario: &Scenario, grad_tol: f64) -> Result<MsaComparison> {
    let np = scenario.prediction_horizon;
    let model = scenario.solve_model(scenario.horizon.max(np))?;
    let ap = penalized(scenario, &model, np)?;
    let u0 = ControlSequence::zeros(model.dims().m, np);
    let h = hessian(&ap, &u0, None, RowMode::Sequential)?;
    let lambda_max = h.symmetric_eigenvalues().max();
    if lambda_max.is_nan() || lambda_max <= 0.0 {
        return Err(OcpError::SolverFailure(format!(
            "Hessian at the start has no positive eigenvalue ({lambda_max})"
        )));
    }
    let step = 1.0 / lambda_max;
    let mut solver = scenario.solver;
    solver.grad_tol = grad_tol;
    let ours = solve_subproblem(&ap, &u0, &solver)?;
    let msa = solve_msa_baseline(&ap, &u0, step, MSA_MAX_ITERS, grad_tol)?;
    Ok(MsaComparison {
        step,
        grad_tol,
        solver_iterations: ours.iterations,
        msa_iterations: msa.iterations,
        msa_converged: msa.converged,
        ratio: msa.iterations as f64 / ours.iterations.max(1) as f64,
    })
}

pub fn run_bench(scenario: &Scenario, repeat: usize, threads: usize, mode: RowMode, seed: u64) -> Result<BenchReport> {
    let sizes = SIZES
        .iter()
        .map(|&n| measure_size(scenario, n, repeat, mode, seed))
        .collect::<Result<Vec<_>>>()?;
    let (mid, big) = (&sizes[1], &sizes[2]);
    let ratios_160_80 = Ratios {
        gradient: big.gradient_s / mid.gradient_s,
        hessian: big.hessian_s / mid.hessian_s,
        subproblem: big.subproblem_s / mid.subproblem_s,
        mpc: big.mpc_total_s.zip(mid.mpc_total_s).map(|(b, m)| b / m),
    };
    let msa = msa_comparison(scenario, scenario.solver.grad_tol)?;
    Ok(BenchReport {
        repeat,
        threads,
        sizes,
        ratios_160_80,
        msa,
    })
}

