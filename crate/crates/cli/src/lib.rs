//! Workflow driver behind the `loadinv` binary. Each stage writes its
//! outputs plus a `runs/<stage>.json` manifest under the run directory and
//! is skipped when a manifest with the same configuration hash already exists.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod pipeline;
pub mod runlog;

use std::fmt;

use loadinv_core::CoreError;

pub use config::{Profile, RunConfig};
pub use pipeline::{Mode, Pipeline, StageOutcome};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(CoreError),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Core(e)
    }
}

impl From<loadinv_nn::NnError> for CliError {
    fn from(e: loadinv_nn::NnError) -> Self {
        CliError::Core(e.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    /// 1 usage, 2 data or contract, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Core(CoreError::Config(_)) => 1,
            CliError::Core(CoreError::Numerical(_) | CoreError::Diverged { .. } | CoreError::Infeasible(_)) => 3,
            CliError::Core(CoreError::Nn(loadinv_nn::NnError::NonFinite(_))) => 3,
            CliError::Core(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
