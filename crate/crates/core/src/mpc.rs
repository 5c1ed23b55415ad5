//! Receding-horizon driver.

use std::time::{Duration, Instant};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::alm::{solve_constrained, AlmConfig};
use crate::error::{check_finite_vec, OcpError, Result};
use crate::model::{ControlSequence, SystemModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmStart {
    /// Drop the first block of the previous solution and repeat the last one.
    #[default]
    ShiftAndHold,
    /// Previous solution as is.
    Reuse,
    Zeros,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcConfig {
    /// Prediction horizon `N_p`.
    pub np: usize,
    /// Number of sampling steps `N`; the loop runs `k = 0..=N`.
    pub n_steps: usize,
    pub alm: AlmConfig,
    pub warm_start: WarmStart,
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.np == 0 {
            return Err(OcpError::invalid("prediction horizon must be positive"));
        }
        if self.n_steps > 0 && self.np > self.n_steps {
            return Err(OcpError::invalid(format!(
                "prediction horizon {} exceeds number of steps {}",
                self.np, self.n_steps
            )));
        }
        self.alm.validate()
    }
}

/// Closed-loop record. Entry `k` of every sequence belongs to sampling time `k`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MpcRun {
    pub applied_controls: Vec<DVector<f64>>,
    pub closed_loop_states: Vec<DVector<f64>>,
    pub per_step_solve_time: Vec<Duration>,
    /// `max(0, max_i c_i)` at the applied point.
    pub per_step_violation: Vec<f64>,
    /// Running cost of the applied point.
    pub per_step_cost: Vec<f64>,
    pub per_step_outer_iterations: Vec<usize>,
    pub per_step_inner_iterations: Vec<usize>,
    pub per_step_converged: Vec<bool>,
}

impl MpcRun {
    pub fn len(&self) -> usize {
        self.applied_controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.applied_controls.is_empty()
    }

    pub fn total_solve_time(&self) -> Duration {
        self.per_step_solve_time.iter().sum()
    }

    pub fn all_converged(&self) -> bool {
        self.per_step_converged.iter().all(|c| *c)
    }
}

/// Runs the loop with zero controls as the first guess.
pub fn run_mpc<M, F>(model_factory: F, x0: &DVector<f64>, cfg: &MpcConfig) -> Result<MpcRun>
where
    M: SystemModel,
    F: Fn(usize) -> Result<M>,
{
    let m = model_factory(0)?.dims().m;
    run_mpc_from(model_factory, x0, &ControlSequence::zeros(m, cfg.np), cfg)
}

/// `model_factory(k)` must return the model whose local step 0 is sampling
/// time `k`. The plant is advanced with that model's dynamics.
pub fn run_mpc_from<M, F>(
    model_factory: F,
    x0: &DVector<f64>,
    u_init: &ControlSequence,
    cfg: &MpcConfig,
) -> Result<MpcRun>
where
    M: SystemModel,
    F: Fn(usize) -> Result<M>,
{
    cfg.validate()?;
    if u_init.horizon() != cfg.np {
        return Err(OcpError::invalid(format!(
            "initial guess has horizon {}, expected {}",
            u_init.horizon(),
            cfg.np
        )));
    }
    let mut run = MpcRun::default();
    let mut x = x0.clone();
    let mut guess = u_init.clone();

    for k in 0..=cfg.n_steps {
        let model = model_factory(k).map_err(|e| step_error(k, e, &run))?;
        if k == 0 && model.dims().n != x0.len() {
            return Err(OcpError::invalid("initial state has the wrong length"));
        }
        let start = Instant::now();
        let report = solve_constrained(&model, &x, &guess, &cfg.alm);
        let elapsed = start.elapsed();
        let report = report.map_err(|e| step_error(k, e, &run))?;

        let u = report.final_u.block(0);
        let l = model.dims().l;
        let violation = (0..l).map(|i| model.constraint(0, i, &x, &u)).fold(0.0, f64::max);
        run.per_step_cost.push(model.running_cost(0, &x, &u));
        run.per_step_violation.push(violation);
        run.per_step_solve_time.push(elapsed);
        run.per_step_outer_iterations.push(report.outer_iterations);
        run.per_step_inner_iterations.push(report.inner_iterations());
        run.per_step_converged.push(report.converged);
        run.closed_loop_states.push(x.clone());
        run.applied_controls.push(u.clone());

        if k == cfg.n_steps {
            break;
        }
        let next = model.dynamics(0, &x, &u);
        check_finite_vec(&next, "plant", k + 1).map_err(|e| step_error(k, e, &run))?;
        x = next;
        guess = next_guess(&report.final_u, cfg.warm_start);
    }
    Ok(run)
}

fn step_error(k: usize, source: OcpError, run: &MpcRun) -> OcpError {
    OcpError::SamplingStep {
        k,
        source: Box::new(source),
        partial: Box::new(run.clone()),
    }
}

fn next_guess(prev: &ControlSequence, mode: WarmStart) -> ControlSequence {
    match mode {
        WarmStart::Reuse => prev.clone(),
        WarmStart::Zeros => ControlSequence::zeros(prev.m(), prev.horizon()),
        WarmStart::ShiftAndHold => {
            let mut blocks = prev.blocks();
            let last = blocks.last().cloned().expect("at least one block");
            blocks.remove(0);
            blocks.push(last);
            ControlSequence::from_blocks(&blocks).expect("blocks share a length")
        }
    }
}
