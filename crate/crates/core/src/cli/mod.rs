//! Command implementations behind the `ocp-fbde` binary.

use std::path::PathBuf;

use thiserror::Error;

use crate::error::OcpError;
use crate::fbde::RowMode;

pub mod bench;
pub mod commands;
pub mod grad_check;
pub mod output;
pub mod scenario;

pub use commands::{cmd_bench, cmd_grad_check, cmd_mpc, cmd_solve, CommandOutcome};
pub use scenario::Scenario;

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success = 0,
    /// Output could not be written.
    Io = 1,
    NotConverged = 2,
    InvalidInput = 3,
    Numerical = 4,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }

    pub fn of(err: &OcpError) -> ExitStatus {
        if err.is_invalid_input() {
            ExitStatus::InvalidInput
        } else {
            ExitStatus::Numerical
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Ocp(#[from] OcpError),

    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn status(&self) -> ExitStatus {
        match self {
            CliError::Ocp(e) => ExitStatus::of(e),
            CliError::Io { .. } => ExitStatus::Io,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

/// Flags shared by all subcommands. `None` fields fall back to the scenario.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: usize,
    pub repeat: usize,
    pub samples: usize,
    /// Also write per-step solve times into the trajectory CSV.
    pub inline_timings: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            out: None,
            seed: None,
            threads: 1,
            repeat: 1,
            samples: 10,
            inline_timings: false,
        }
    }
}

impl RunOptions {
    pub fn row_mode(&self) -> RowMode {
        if self.threads > 1 {
            RowMode::Parallel
        } else {
            RowMode::Sequential
        }
    }

    pub(crate) fn out_dir(&self, scenario: &Scenario) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(&scenario.output.dir))
    }

    pub(crate) fn seed(&self, scenario: &Scenario) -> u64 {
        self.seed.unwrap_or(scenario.seed)
    }
}
