//! Constrained discrete-time optimal control with exact second-order
//! information from forward-backward difference equations.
//!
//! The pipeline is: a [`model::SystemModel`] supplies dynamics, cost and
//! constraints; [`penalty`] folds the constraints into an augmented cost;
//! [`fbde`] computes its gradient and Hessian with respect to the stacked
//! controls; [`solver`] minimizes it; [`alm`] updates multipliers; [`mpc`]
//! runs the receding-horizon loop.

pub mod alm;
pub mod cli;
pub mod error;
pub mod fbde;
pub mod model;
pub mod mpc;
pub mod penalty;
pub mod solver;

pub use alm::{solve_constrained, AlmConfig, AlmReport};
pub use error::{OcpError, Result};
pub use fbde::{gradient, hessian, RowMode};
pub use model::{rollout, ControlSequence, Dims, StateTrajectory, SystemModel};
pub use mpc::{run_mpc, run_mpc_from, MpcConfig, MpcRun, WarmStart};
pub use penalty::{AugmentedProblem, MultiplierTable, PenaltyState};
pub use solver::{solve_subproblem, SolveReport, SolverConfig};
