//! Subcommand bodies. Each returns the files it wrote and the exit status.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::bench::{run_bench, BenchReport};
use super::grad_check::{check_instance, random_instance, SampleCheck};
use super::output::{
    ensure_dir, min_clearance, write_json, write_plot, write_timings, write_trajectory, RunMetrics, TrajectoryRows,
    METRICS_FILE, PLOT_FILE, TIMINGS_FILE, TRAJECTORY_FILE,
};
use super::scenario::Scenario;
use super::{CliError, ExitStatus, RunOptions};
use crate::alm::solve_constrained;
use crate::error::OcpError;
use crate::model::{total_cost, SystemModel};
use crate::mpc::{run_mpc_from, MpcRun};

#[derive(Debug)]
pub struct CommandOutcome {
    pub status: ExitStatus,
    /// One-line summary for the terminal.
    pub summary: String,
    pub files: Vec<PathBuf>,
}

#[derive(Serialize)]
struct GradCheckFile<'a> {
    samples: &'a [SampleCheck],
    all_passed: bool,
}

pub fn cmd_grad_check(scenario: &Scenario, opts: &RunOptions) -> Result<CommandOutcome, CliError> {
    let out = opts.out_dir(scenario);
    ensure_dir(&out)?;
    let base = scenario.solve_model(scenario.horizon)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed(scenario));
    let mut checks = Vec::with_capacity(opts.samples);
    for s in 0..opts.samples {
        let inst = random_instance(scenario, &base, &mut rng)?;
        checks.push(check_instance(s, &inst, opts.row_mode())?);
    }
    let all_passed = checks.iter().all(|c| c.passed);
    let csv_path = out.join("grad_check.csv");
    write_grad_csv(&csv_path, &checks)?;
    let json_path = write_json(
        &out.join("grad_check.json"),
        &GradCheckFile {
            samples: &checks,
            all_passed,
        },
    )?;
    let worst = |f: fn(&SampleCheck) -> f64| checks.iter().map(f).fold(0.0, f64::max);
    Ok(CommandOutcome {
        status: if all_passed { ExitStatus::Success } else { ExitStatus::Numerical },
        summary: format!(
            "{} samples, worst gradient error {:.3e}, worst Hessian error {:.3e}, worst asymmetry {:.3e}",
            checks.len(),
            worst(|c| c.gradient_rel_error),
            worst(|c| c.hessian_rel_error),
            worst(|c| c.asymmetry),
        ),
        files: vec![csv_path, json_path],
    })
}

fn write_grad_csv(path: &Path, checks: &[SampleCheck]) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::io(path, e.into());
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for c in checks {
        w.serialize(c).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// One full-horizon constrained solve.
pub fn cmd_solve(scenario: &Scenario, opts: &RunOptions) -> Result<CommandOutcome, CliError> {
    let out = opts.out_dir(scenario);
    ensure_dir(&out)?;
    let n = scenario.horizon;
    let model = scenario.solve_model(n)?;
    let x0 = scenario.x0();
    let u0 = scenario.initial_controls(&model, n);
    let mut cfg = scenario.alm_config();
    cfg.solver.row_mode = opts.row_mode();

    let start = Instant::now();
    let report = solve_constrained(&model, &x0, &u0, &cfg);
    let elapsed = start.elapsed();
    let report = report?;

    let states = report.final_trajectory.states();
    let controls = report.final_u.blocks();
    let l = model.dims().l;
    let violations: Vec<f64> = states
        .iter()
        .zip(&controls)
        .enumerate()
        .map(|(k, (x, u))| (0..l).map(|i| model.constraint(k, i, x, u)).fold(0.0, f64::max))
        .collect();
    let mut files = vec![write_trajectory(
        &out.join(TRAJECTORY_FILE),
        &model,
        &TrajectoryRows {
            states,
            controls: &controls,
            solve_times: None,
            violations: &violations,
        },
    )?];
    files.push(write_timings(
        &out.join(TIMINGS_FILE),
        &[elapsed],
        &[report.outer_iterations],
        &[report.inner_iterations()],
    )?);
    let metrics = RunMetrics {
        total_solve_time_s: elapsed.as_secs_f64(),
        average_solve_time_s: elapsed.as_secs_f64(),
        final_cost: total_cost(&model, &report.final_trajectory, &report.final_u)?,
        max_violation: violations.iter().copied().fold(0.0, f64::max),
        min_obstacle_clearance: min_clearance(model.constraints(), states),
        outer_iterations_total: report.outer_iterations,
        inner_iterations_total: report.inner_iterations(),
    };
    files.push(write_json(&out.join(METRICS_FILE), &metrics)?);
    files.push(write_plot(&out.join(PLOT_FILE), &model, states)?);

    let sigma = report.final_penalty.sigma();
    let final_violation = report.violation_history.last().copied().unwrap_or(0.0);
    Ok(CommandOutcome {
        status: if report.converged { ExitStatus::Success } else { ExitStatus::NotConverged },
        summary: format!(
            "{} after {} outer iterations, violation measure {:.3e}, sigma {:.3e}, cost {:.6}",
            if report.converged { "converged" } else { "not converged" },
            report.outer_iterations,
            final_violation,
            sigma,
            metrics.final_cost
        ),
        files,
    })
}

/// Receding-horizon run. With `repeat > 1` the run is repeated and the
/// reported times are means; the written trajectory is from the last run.
pub fn cmd_mpc(scenario: &Scenario, opts: &RunOptions) -> Result<CommandOutcome, CliError> {
    let out = opts.out_dir(scenario);
    ensure_dir(&out)?;
    let model = scenario.solve_model(scenario.horizon)?;
    let mut cfg = scenario.mpc_config();
    cfg.alm.solver.row_mode = opts.row_mode();
    let u0 = scenario.initial_controls(&model, cfg.np);

    let repeat = opts.repeat.max(1);
    let mut total = Duration::ZERO;
    let mut last = MpcRun::default();
    for _ in 0..repeat {
        match run_mpc_from(|k| Ok(model.window(k)), &scenario.x0(), &u0, &cfg) {
            Ok(run) => {
                total += run.total_solve_time();
                last = run;
            }
            Err(OcpError::SamplingStep { k, source, partial }) => {
                write_run(&out, &model, &partial, opts.inline_timings)?;
                return Err(OcpError::SamplingStep { k, source, partial }.into());
            }
            Err(e) => return Err(e.into()),
        }
    }
    let total_s = total.as_secs_f64() / repeat as f64;
    let mut files = write_run(&out, &model, &last, opts.inline_timings)?;
    let metrics = RunMetrics {
        total_solve_time_s: total_s,
        average_solve_time_s: total_s / last.len() as f64,
        final_cost: last.per_step_cost.iter().sum(),
        max_violation: last.per_step_violation.iter().copied().fold(0.0, f64::max),
        min_obstacle_clearance: min_clearance(model.constraints(), &last.closed_loop_states),
        outer_iterations_total: last.per_step_outer_iterations.iter().sum(),
        inner_iterations_total: last.per_step_inner_iterations.iter().sum(),
    };
    files.push(write_json(&out.join(METRICS_FILE), &metrics)?);

    let converged = last.all_converged();
    let unconverged = last.per_step_converged.iter().filter(|c| !**c).count();
    Ok(CommandOutcome {
        status: if converged { ExitStatus::Success } else { ExitStatus::NotConverged },
        summary: format!(
            "{} steps, {} not converged, total solve {:.4} s (mean of {repeat}), average {:.3e} s, max violation {:.3e}",
            last.len(),
            unconverged,
            metrics.total_solve_time_s,
            metrics.average_solve_time_s,
            metrics.max_violation
        ),
        files,
    })
}

fn write_run(
    out: &Path,
    model: &super::scenario::BuiltModel,
    run: &MpcRun,
    inline_timings: bool,
) -> Result<Vec<PathBuf>, CliError> {
    let rows = TrajectoryRows {
        states: &run.closed_loop_states,
        controls: &run.applied_controls,
        solve_times: inline_timings.then_some(&run.per_step_solve_time[..]),
        violations: &run.per_step_violation,
    };
    Ok(vec![
        write_trajectory(&out.join(TRAJECTORY_FILE), model, &rows)?,
        write_timings(
            &out.join(TIMINGS_FILE),
            &run.per_step_solve_time,
            &run.per_step_outer_iterations,
            &run.per_step_inner_iterations,
        )?,
        write_plot(&out.join(PLOT_FILE), model, &run.closed_loop_states)?,
    ])
}

pub fn cmd_bench(scenario: &Scenario, opts: &RunOptions) -> Result<CommandOutcome, CliError> {
    let out = opts.out_dir(scenario);
    ensure_dir(&out)?;
    let report: BenchReport = run_bench(scenario, opts.repeat, opts.threads, opts.row_mode(), opts.seed(scenario))?;
    let json = write_json(&out.join("bench.json"), &report)?;
    let csv_path = out.join("bench.csv");
    let io = |e: csv::Error| CliError::io(&csv_path, e.into());
    let mut w = csv::Writer::from_path(&csv_path).map_err(io)?;
    for s in &report.sizes {
        w.serialize(s).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(&csv_path, e))?;
    let r = &report.ratios_160_80;
    Ok(CommandOutcome {
        status: ExitStatus::Success,
        summary: format!(
            "160/80 ratios: gradient {:.2}, Hessian {:.2}; descent baseline {} vs {} iterations",
            r.gradient, r.hessian, report.msa.msa_iterations, report.msa.solver_iterations
        ),
        files: vec![json, csv_path],
    })
}
