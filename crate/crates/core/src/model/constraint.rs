use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{OcpError, Result};

/// Inequality `c(x, u) <= 0` in one of the forms the shipped models support.
///
/// A two-sided box on a control component is two of these: `u_p - upper <= 0`
/// and `lower - u_p <= 0`. A circular keep-out zone on two state components
/// is `r² - (x_i - cx)² - (x_j - cy)² <= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Constraint {
    ControlUpper {
        component: usize,
        bound: f64,
    },
    ControlLower {
        component: usize,
        bound: f64,
    },
    KeepOut {
        x_index: usize,
        y_index: usize,
        center: [f64; 2],
        radius: f64,
    },
}

impl Constraint {
    pub(crate) fn validate(&self, n: usize, m: usize) -> Result<()> {
        match *self {
            Constraint::ControlUpper { component, bound }
            | Constraint::ControlLower { component, bound } => {
                if component >= m {
                    return Err(OcpError::invalid(format!(
                        "control bound on component {component} but m={m}"
                    )));
                }
                if !bound.is_finite() {
                    return Err(OcpError::invalid("control bound must be finite"));
                }
            }
            Constraint::KeepOut {
                x_index,
                y_index,
                center,
                radius,
            } => {
                if x_index >= n || y_index >= n || x_index == y_index {
                    return Err(OcpError::invalid(format!(
                        "keep-out zone uses state components ({x_index}, {y_index}) but n={n}"
                    )));
                }
                if !(radius > 0.0 && radius.is_finite()) || center.iter().any(|c| !c.is_finite()) {
                    return Err(OcpError::invalid(
                        "keep-out zone needs a finite center and positive radius",
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn value(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        match *self {
            Constraint::ControlUpper { component, bound } => u[component] - bound,
            Constraint::ControlLower { component, bound } => bound - u[component],
            Constraint::KeepOut {
                x_index,
                y_index,
                center,
                radius,
            } => {
                let dx = x[x_index] - center[0];
                let dy = x[y_index] - center[1];
                radius * radius - dx * dx - dy * dy
            }
        }
    }

    pub fn gradient(&self, x: &DVector<f64>, _u: &DVector<f64>, n: usize, m: usize) -> DVector<f64> {
        let mut g = DVector::zeros(n + m);
        match *self {
            Constraint::ControlUpper { component, .. } => g[n + component] = 1.0,
            Constraint::ControlLower { component, .. } => g[n + component] = -1.0,
            Constraint::KeepOut {
                x_index,
                y_index,
                center,
                ..
            } => {
                g[x_index] = -2.0 * (x[x_index] - center[0]);
                g[y_index] = -2.0 * (x[y_index] - center[1]);
            }
        }
        g
    }

    pub fn hessian(&self, n: usize, m: usize) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(n + m, n + m);
        if let Constraint::KeepOut {
            x_index, y_index, ..
        } = *self
        {
            h[(x_index, x_index)] = -2.0;
            h[(y_index, y_index)] = -2.0;
        }
        h
    }

    /// Distance from the zone boundary (negative inside). `None` for control bounds.
    pub fn clearance(&self, x: &DVector<f64>) -> Option<f64> {
        match *self {
            Constraint::KeepOut {
                x_index,
                y_index,
                center,
                radius,
            } => Some((x[x_index] - center[0]).hypot(x[y_index] - center[1]) - radius),
            _ => None,
        }
    }

    pub fn is_keep_out(&self) -> bool {
        matches!(self, Constraint::KeepOut { .. })
    }
}

/// Transcribes `lower <= u_p <= upper` into affine inequalities; either side may be absent.
pub fn control_box(component: usize, lower: Option<f64>, upper: Option<f64>) -> Vec<Constraint> {
    let mut out = Vec::with_capacity(2);
    if let Some(bound) = upper {
        out.push(Constraint::ControlUpper { component, bound });
    }
    if let Some(bound) = lower {
        out.push(Constraint::ControlLower { component, bound });
    }
    out
}
