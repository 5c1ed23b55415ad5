//! CSV and JSON writers.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::scenario::BuiltModel;
use super::CliError;
use crate::model::Constraint;

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const TIMINGS_FILE: &str = "timings.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const PLOT_FILE: &str = "plot.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub total_solve_time_s: f64,
    pub average_solve_time_s: f64,
    pub final_cost: f64,
    pub max_violation: f64,
    /// Smallest distance to a keep-out boundary; `None` without keep-out zones.
    pub min_obstacle_clearance: Option<f64>,
    pub outer_iterations_total: usize,
    pub inner_iterations_total: usize,
}

/// One row per step of a closed-loop or open-loop trajectory.
pub struct TrajectoryRows<'a> {
    pub states: &'a [DVector<f64>],
    pub controls: &'a [DVector<f64>],
    pub solve_times: Option<&'a [Duration]>,
    pub violations: &'a [f64],
}

pub(crate) fn state_names(model: &BuiltModel) -> Vec<String> {
    match model {
        BuiltModel::Agv(_) => vec!["x".into(), "y".into(), "theta".into()],
        BuiltModel::Lti(m) => (0..m.a().nrows()).map(|i| format!("x{i}")).collect(),
    }
}

pub(crate) fn control_names(model: &BuiltModel) -> Vec<String> {
    match model {
        BuiltModel::Agv(_) => vec!["v".into(), "omega".into()],
        BuiltModel::Lti(m) => (0..m.b().ncols()).map(|i| format!("u{i}")).collect(),
    }
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::io(path, e.into()))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::io(path, e.into())
}

/// Columns `k, <states>, <controls>, solve_time_s, violation`. The solve time
/// column stays empty unless times are given.
pub fn write_trajectory(path: &Path, model: &BuiltModel, rows: &TrajectoryRows<'_>) -> Result<PathBuf, CliError> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["k".to_string()];
    header.extend(state_names(model));
    header.extend(control_names(model));
    header.extend(["solve_time_s".to_string(), "violation".to_string()]);
    w.write_record(&header).map_err(csv_err(path))?;
    for (k, (x, u)) in rows.states.iter().zip(rows.controls).enumerate() {
        let mut record = vec![k.to_string()];
        record.extend(x.iter().chain(u.iter()).map(f64::to_string));
        record.push(rows.solve_times.map_or(String::new(), |t| t[k].as_secs_f64().to_string()));
        record.push(rows.violations[k].to_string());
        w.write_record(&record).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(path.to_path_buf())
}

pub fn write_timings(
    path: &Path,
    solve_times: &[Duration],
    outer: &[usize],
    inner: &[usize],
) -> Result<PathBuf, CliError> {
    let mut w = csv_writer(path)?;
    w.write_record(["k", "solve_time_s", "outer_iterations", "inner_iterations"])
        .map_err(csv_err(path))?;
    for (k, t) in solve_times.iter().enumerate() {
        w.write_record([
            k.to_string(),
            t.as_secs_f64().to_string(),
            outer[k].to_string(),
            inner[k].to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(path.to_path_buf())
}

/// Reference and actual state side by side, `k, <state>_ref..., <state>...`.
pub fn write_plot(path: &Path, model: &BuiltModel, states: &[DVector<f64>]) -> Result<PathBuf, CliError> {
    let mut w = csv_writer(path)?;
    let names = state_names(model);
    let mut header = vec!["k".to_string()];
    header.extend(names.iter().map(|n| format!("{n}_ref")));
    header.extend(names.iter().cloned());
    w.write_record(&header).map_err(csv_err(path))?;
    for (k, x) in states.iter().enumerate() {
        let reference = model.reference_state(k).unwrap_or_else(|| DVector::zeros(x.len()));
        let mut record = vec![k.to_string()];
        record.extend(reference.iter().chain(x.iter()).map(f64::to_string));
        w.write_record(&record).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(path.to_path_buf())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<PathBuf, CliError> {
    let text = serde_json::to_string_pretty(value).expect("plain data serializes");
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))?;
    Ok(path.to_path_buf())
}

/// Smallest `distance - radius` over all states and keep-out zones.
pub fn min_clearance(constraints: &[Constraint], states: &[DVector<f64>]) -> Option<f64> {
    constraints
        .iter()
        .filter(|c| c.is_keep_out())
        .flat_map(|c| states.iter().filter_map(move |x| c.clearance(x)))
        .reduce(f64::min)
}
