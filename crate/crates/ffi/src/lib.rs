//! C interface to the `ocp-fbde` solver.
//!
//! Every fallible call returns an [`OcpStatus`]; on failure the message is
//! available from [`ocp_last_error_message`] on the same thread. Handles are
//! opaque and must be released with the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use ocp_fbde::cli::{ExitStatus, Scenario};
use ocp_fbde::{run_mpc_from, solve_constrained, OcpError, SystemModel};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OcpStatus {
    Ok = 0,
    Io = 1,
    /// The call finished and produced a result, but the solver did not converge.
    NotConverged = 2,
    InvalidInput = 3,
    NumericalFailure = 4,
    NullPointer = 5,
    Panic = 6,
    BufferTooSmall = 7,
}

/// A parsed and validated scenario.
pub struct OcpScenario {
    inner: Scenario,
}

/// States and controls of a solve or closed-loop run, one row per step.
pub struct OcpResult {
    steps: usize,
    state_dim: usize,
    control_dim: usize,
    states: Vec<f64>,
    controls: Vec<f64>,
    solve_time_s: f64,
    converged: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &OcpError) -> OcpStatus {
    match ExitStatus::of(err) {
        ExitStatus::InvalidInput => OcpStatus::InvalidInput,
        _ => OcpStatus::NumericalFailure,
    }
}

fn guarded(f: impl FnOnce() -> Result<OcpStatus, (OcpStatus, String)>) -> OcpStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(status)) => status,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside ocp-fbde");
            OcpStatus::Panic
        }
    }
}

fn fail(err: OcpError) -> (OcpStatus, String) {
    (status_of(&err), err.to_string())
}

unsafe fn read_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, (OcpStatus, String)> {
    if ptr.is_null() {
        return Err((OcpStatus::NullPointer, format!("{what} is NULL")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| (OcpStatus::InvalidInput, format!("{what} is not UTF-8")))
}

fn flatten<'a>(rows: impl Iterator<Item = impl IntoIterator<Item = &'a f64>>) -> Vec<f64> {
    rows.flat_map(|r| r.into_iter().copied()).collect()
}

/// Last error message on this thread, or NULL. Valid until the next call
/// into this library from the same thread.
#[no_mangle]
pub extern "C" fn ocp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ocp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a scenario from JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ocp_scenario_from_json(json: *const c_char, out: *mut *mut OcpScenario) -> OcpStatus {
    guarded(|| {
        if out.is_null() {
            return Err((OcpStatus::NullPointer, "out is NULL".into()));
        }
        let text = read_str(json, "json")?;
        let inner = Scenario::from_json(text).map_err(fail)?;
        *out = Box::into_raw(Box::new(OcpScenario { inner }));
        Ok(OcpStatus::Ok)
    })
}

/// Reads and parses a scenario file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ocp_scenario_load(path: *const c_char, out: *mut *mut OcpScenario) -> OcpStatus {
    guarded(|| {
        if out.is_null() {
            return Err((OcpStatus::NullPointer, "out is NULL".into()));
        }
        let path = read_str(path, "path")?;
        let inner = Scenario::load(Path::new(path)).map_err(fail)?;
        *out = Box::into_raw(Box::new(OcpScenario { inner }));
        Ok(OcpStatus::Ok)
    })
}

/// # Safety
/// `scenario` must come from `ocp_scenario_from_json` or `ocp_scenario_load`
/// and not be freed yet. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn ocp_scenario_free(scenario: *mut OcpScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Solves the scenario once over its full horizon. On `Ok` and
/// `NotConverged`, `*out` holds a result to free with `ocp_result_free`.
///
/// # Safety
/// `scenario` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ocp_solve(scenario: *const OcpScenario, out: *mut *mut OcpResult) -> OcpStatus {
    guarded(|| {
        if scenario.is_null() || out.is_null() {
            return Err((OcpStatus::NullPointer, "scenario or out is NULL".into()));
        }
        let s = &(*scenario).inner;
        let model = s.solve_model(s.horizon).map_err(fail)?;
        let u0 = s.initial_controls(&model, s.horizon);
        let start = Instant::now();
        let report = solve_constrained(&model, &s.x0(), &u0, &s.alm_config()).map_err(fail)?;
        let dims = model.dims();
        let res = OcpResult {
            steps: s.horizon + 1,
            state_dim: dims.n,
            control_dim: dims.m,
            states: flatten(report.final_trajectory.states().iter().map(|x| x.iter())),
            controls: report.final_u.stacked().iter().copied().collect(),
            solve_time_s: start.elapsed().as_secs_f64(),
            converged: report.converged,
        };
        *out = Box::into_raw(Box::new(res));
        Ok(if report.converged { OcpStatus::Ok } else { OcpStatus::NotConverged })
    })
}

/// Runs the receding-horizon loop. On `Ok` and `NotConverged`, `*out` holds
/// a result to free with `ocp_result_free`.
///
/// # Safety
/// `scenario` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ocp_run_mpc(scenario: *const OcpScenario, out: *mut *mut OcpResult) -> OcpStatus {
    guarded(|| {
        if scenario.is_null() || out.is_null() {
            return Err((OcpStatus::NullPointer, "scenario or out is NULL".into()));
        }
        let s = &(*scenario).inner;
        let model = s.solve_model(s.horizon).map_err(fail)?;
        let cfg = s.mpc_config();
        let u0 = s.initial_controls(&model, cfg.np);
        let run = run_mpc_from(|k| Ok(model.window(k)), &s.x0(), &u0, &cfg).map_err(fail)?;
        let dims = model.dims();
        let converged = run.all_converged();
        let res = OcpResult {
            steps: run.len(),
            state_dim: dims.n,
            control_dim: dims.m,
            states: flatten(run.closed_loop_states.iter().map(|x| x.iter())),
            controls: flatten(run.applied_controls.iter().map(|u| u.iter())),
            solve_time_s: run.total_solve_time().as_secs_f64(),
            converged,
        };
        *out = Box::into_raw(Box::new(res));
        Ok(if converged { OcpStatus::Ok } else { OcpStatus::NotConverged })
    })
}

/// # Safety
/// `result` must be a live handle or NULL (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn ocp_result_steps(result: *const OcpResult) -> usize {
    result.as_ref().map_or(0, |r| r.steps)
}

/// # Safety
/// `result` must be a live handle or NULL (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn ocp_result_state_dim(result: *const OcpResult) -> usize {
    result.as_ref().map_or(0, |r| r.state_dim)
}

/// # Safety
/// `result` must be a live handle or NULL (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn ocp_result_control_dim(result: *const OcpResult) -> usize {
    result.as_ref().map_or(0, |r| r.control_dim)
}

/// Seconds spent inside the solver.
///
/// # Safety
/// `result` must be a live handle or NULL (which yields NaN).
#[no_mangle]
pub unsafe extern "C" fn ocp_result_solve_time(result: *const OcpResult) -> f64 {
    result.as_ref().map_or(f64::NAN, |r| r.solve_time_s)
}

/// # Safety
/// `result` must be a live handle or NULL (which yields false).
#[no_mangle]
pub unsafe extern "C" fn ocp_result_converged(result: *const OcpResult) -> bool {
    result.as_ref().is_some_and(|r| r.converged)
}

unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize) -> OcpStatus {
    guarded(|| {
        if buf.is_null() {
            return Err((OcpStatus::NullPointer, "buffer is NULL".into()));
        }
        if len < src.len() {
            return Err((
                OcpStatus::BufferTooSmall,
                format!("buffer holds {len} values, {} needed", src.len()),
            ));
        }
        std::ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
        Ok(OcpStatus::Ok)
    })
}

/// Copies the states row-major, `steps × state_dim` values.
///
/// # Safety
/// `result` must be a live handle and `buf` must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ocp_result_states(result: *const OcpResult, buf: *mut f64, len: usize) -> OcpStatus {
    match result.as_ref() {
        Some(r) => copy_out(&r.states, buf, len),
        None => {
            set_error("result is NULL");
            OcpStatus::NullPointer
        }
    }
}

/// Copies the controls row-major, `steps × control_dim` values.
///
/// # Safety
/// `result` must be a live handle and `buf` must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ocp_result_controls(result: *const OcpResult, buf: *mut f64, len: usize) -> OcpStatus {
    match result.as_ref() {
        Some(r) => copy_out(&r.controls, buf, len),
        None => {
            set_error("result is NULL");
            OcpStatus::NullPointer
        }
    }
}

/// # Safety
/// `result` must come from `ocp_solve` or `ocp_run_mpc` and not be freed
/// yet. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn ocp_result_free(result: *mut OcpResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}
