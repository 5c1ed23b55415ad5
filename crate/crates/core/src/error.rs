use thiserror::Error;

use crate::mpc::MpcRun;

pub type Result<T, E = OcpError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum OcpError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    /// A non-finite value appeared while evaluating `what` at time step `step`.
    #[error("numerical divergence in {what} at step {step}")]
    NumericalDivergence { what: &'static str, step: usize },

    /// Non-finite value in Hessian row `row` while sweeping step `step`.
    #[error("numerical divergence in Hessian row {row} at step {step}")]
    HessianDivergence { row: usize, step: usize },

    #[error("solver failure: {0}")]
    SolverFailure(String),

    #[error("outer iteration {outer}: {source}")]
    Subproblem {
        outer: usize,
        #[source]
        source: Box<OcpError>,
    },

    /// Failure at one sampling time of a receding-horizon run. The steps that
    /// completed before the failure are kept in `partial`.
    #[error("sampling time {k}: {source}")]
    SamplingStep {
        k: usize,
        #[source]
        source: Box<OcpError>,
        partial: Box<MpcRun>,
    },
}

impl OcpError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        OcpError::InvalidArgument(msg.into())
    }

    /// Innermost error after peeling off outer-iteration and sampling-time context.
    pub fn root(&self) -> &OcpError {
        match self {
            OcpError::Subproblem { source, .. } | OcpError::SamplingStep { source, .. } => {
                source.root()
            }
            other => other,
        }
    }

    pub fn is_invalid_input(&self) -> bool {
        matches!(
            self.root(),
            OcpError::InvalidArgument(_) | OcpError::InvalidState(_)
        )
    }
}

pub(crate) fn check_finite_vec(
    v: &nalgebra::DVector<f64>,
    what: &'static str,
    step: usize,
) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(OcpError::NumericalDivergence { what, step })
    }
}
