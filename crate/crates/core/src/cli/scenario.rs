//! Scenario files: one JSON document describing model, horizons, constraints
//! and solver settings.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::alm::AlmConfig;
use crate::error::{OcpError, Result};
use crate::model::{control_box, make_agv_model, make_lti_model, AgvModel, AgvParams, Constraint, ControlSequence, LtiModel, SystemModel};
use crate::mpc::{MpcConfig, WarmStart};
use crate::solver::SolverConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    pub model: ModelSpec,
    /// Total number of steps `N`.
    pub horizon: usize,
    /// `N_p`.
    pub prediction_horizon: usize,
    pub initial_state: Vec<f64>,
    #[serde(default)]
    pub constraints: Vec<ConstraintSpec>,
    #[serde(default)]
    pub alm: AlmSettings,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub mpc: MpcSettings,
    #[serde(default)]
    pub initial_guess: InitialGuess,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Agv {
        delta: f64,
        q: Vec<Vec<f64>>,
        r: Vec<Vec<f64>>,
        reference: AgvReference,
    },
    Lti {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        q: Vec<Vec<f64>>,
        r: Vec<Vec<f64>>,
        x_ref: Vec<f64>,
    },
}

/// Reference velocities per step (last entry held) and the pose the reference
/// trajectory starts from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgvReference {
    pub v: Vec<f64>,
    pub omega: Vec<f64>,
    pub start: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstraintSpec {
    ControlBox {
        component: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lower: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        upper: Option<f64>,
    },
    KeepOut {
        center: [f64; 2],
        radius: f64,
        #[serde(default)]
        x_index: usize,
        #[serde(default = "one")]
        y_index: usize,
    },
}

fn one() -> usize {
    1
}

/// ALM settings as they appear in a scenario. The inner solver settings live
/// in the scenario's `solver` section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlmSettings {
    pub sigma1: f64,
    pub beta: f64,
    pub eps: f64,
    pub max_outer: usize,
    pub sigma_max: f64,
    pub saddle_branching: bool,
}

impl Default for AlmSettings {
    fn default() -> Self {
        let d = AlmConfig::default();
        AlmSettings {
            sigma1: d.sigma1,
            beta: d.beta,
            eps: d.eps,
            max_outer: d.max_outer,
            sigma_max: d.sigma_max,
            saddle_branching: d.saddle_branching,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcSettings {
    pub warm_start: WarmStart,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialGuess {
    /// Reference controls for AGV models, zeros otherwise.
    #[default]
    Reference,
    Zeros,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: String,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec { dir: "out".into() }
    }
}

/// A model built from a scenario.
#[derive(Debug, Clone)]
pub enum BuiltModel {
    Agv(AgvModel),
    Lti(LtiModel),
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario> {
        let scenario: Scenario = serde_json::from_str(text)
            .map_err(|e| OcpError::invalid(format!("scenario: {e}")))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| OcpError::invalid(format!("cannot read {}: {e}", path.display())))?;
        Scenario::from_json(&text).map_err(|e| match e {
            OcpError::InvalidArgument(msg) => OcpError::InvalidArgument(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(OcpError::invalid(format!(
                "unsupported schema_version {}, expected {SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        self.mpc_config().validate()?;
        self.solve_model(self.horizon).map(|_| ())
    }

    pub fn alm_config(&self) -> AlmConfig {
        AlmConfig {
            sigma1: self.alm.sigma1,
            beta: self.alm.beta,
            eps: self.alm.eps,
            max_outer: self.alm.max_outer,
            sigma_max: self.alm.sigma_max,
            saddle_branching: self.alm.saddle_branching,
            solver: self.solver,
        }
    }

    pub fn mpc_config(&self) -> MpcConfig {
        MpcConfig {
            np: self.prediction_horizon,
            n_steps: self.horizon,
            alm: self.alm_config(),
            warm_start: self.mpc.warm_start,
        }
    }

    pub fn x0(&self) -> DVector<f64> {
        DVector::from_vec(self.initial_state.clone())
    }

    pub fn constraint_list(&self) -> Vec<Constraint> {
        let mut out = Vec::new();
        for c in &self.constraints {
            match *c {
                ConstraintSpec::ControlBox { component, lower, upper } => {
                    out.extend(control_box(component, lower, upper));
                }
                ConstraintSpec::KeepOut {
                    center,
                    radius,
                    x_index,
                    y_index,
                } => out.push(Constraint::KeepOut {
                    x_index,
                    y_index,
                    center,
                    radius,
                }),
            }
        }
        out
    }

    /// Model whose reference tables cover `horizon` steps.
    pub fn solve_model(&self, horizon: usize) -> Result<BuiltModel> {
        let built = match &self.model {
            ModelSpec::Agv { delta, q, r, reference } => {
                let params = AgvParams {
                    delta: *delta,
                    v_ref: reference.v.clone(),
                    omega_ref: reference.omega.clone(),
                    reference_start: reference.start,
                    q: matrix(q, "q")?,
                    r: matrix(r, "r")?,
                };
                BuiltModel::Agv(make_agv_model(&params, horizon)?.with_constraints(self.constraint_list())?)
            }
            ModelSpec::Lti { a, b, q, r, x_ref } => BuiltModel::Lti(
                make_lti_model(
                    &matrix(a, "a")?,
                    &matrix(b, "b")?,
                    &matrix(q, "q")?,
                    &matrix(r, "r")?,
                    &DVector::from_vec(x_ref.clone()),
                )?
                .with_constraints(self.constraint_list())?,
            ),
        };
        let n = built.as_model().dims().n;
        if self.initial_state.len() != n {
            return Err(OcpError::invalid(format!(
                "initial_state has {} entries, model state has {n}",
                self.initial_state.len()
            )));
        }
        Ok(built)
    }

    /// First guess over a horizon starting at global step 0.
    pub fn initial_controls(&self, model: &BuiltModel, horizon: usize) -> ControlSequence {
        match (self.initial_guess, model) {
            (InitialGuess::Reference, BuiltModel::Agv(agv)) => agv.reference_controls(horizon),
            _ => ControlSequence::zeros(model.as_model().dims().m, horizon),
        }
    }
}

impl BuiltModel {
    pub fn as_model(&self) -> &dyn SystemModel {
        match self {
            BuiltModel::Agv(m) => m,
            BuiltModel::Lti(m) => m,
        }
    }

    /// Model seen from sampling time `k`.
    pub fn window(&self, k: usize) -> BuiltModel {
        match self {
            BuiltModel::Agv(m) => BuiltModel::Agv(m.window(k)),
            BuiltModel::Lti(m) => BuiltModel::Lti(m.clone()),
        }
    }

    pub fn constraints(&self) -> &[Constraint] {
        match self {
            BuiltModel::Agv(m) => m.constraints(),
            BuiltModel::Lti(m) => m.constraints(),
        }
    }

    /// Reference pose at global step `k`, when the model has one.
    pub fn reference_state(&self, k: usize) -> Option<DVector<f64>> {
        match self {
            BuiltModel::Agv(m) => Some(m.reference_state(k)),
            BuiltModel::Lti(m) => Some(m.x_ref().clone()),
        }
    }
}

impl SystemModel for BuiltModel {
    fn dims(&self) -> crate::model::Dims {
        self.as_model().dims()
    }
    fn dynamics(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.as_model().dynamics(k, x, u)
    }
    fn dynamics_jacobian(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        self.as_model().dynamics_jacobian(k, x, u)
    }
    fn dynamics_curvature(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DMatrix<f64> {
        self.as_model().dynamics_curvature(k, x, u, w)
    }
    fn running_cost(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        self.as_model().running_cost(k, x, u)
    }
    fn cost_gradient(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.as_model().cost_gradient(k, x, u)
    }
    fn cost_hessian(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        self.as_model().cost_hessian(k, x, u)
    }
    fn constraint(&self, k: usize, i: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        self.as_model().constraint(k, i, x, u)
    }
    fn constraint_gradient(&self, k: usize, i: usize, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.as_model().constraint_gradient(k, i, x, u)
    }
    fn constraint_hessian(&self, k: usize, i: usize, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        self.as_model().constraint_hessian(k, i, x, u)
    }
}

fn matrix(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(OcpError::invalid(format!("matrix `{name}` must be a non-empty rectangular list of rows")));
    }
    Ok(DMatrix::from_row_iterator(nrows, ncols, rows.iter().flatten().copied()))
}
