//! Experiment harness around `vpp-core`: configuration files, bundled data,
//! training and evaluation loops, CSV logs, checkpoints and report tables.

use std::path::{Path, PathBuf};

use thiserror::Error;
use vpp_core::agent::AgentError;

pub mod config;
pub mod data;
pub mod harness;
pub mod output;
pub mod report;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("solver: {0}")]
    Solver(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("{aborted} of {episodes} episodes aborted")]
    Aborted { aborted: usize, episodes: usize },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("format: {0}")]
    Format(String),
    #[error("checkpoint expects state dimension {expected}, environment has {found}")]
    Dimension { expected: usize, found: usize },
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.to_path_buf(), source }
    }

    /// Process exit code; 2 is left to argument parsing.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Dimension { .. } => 3,
            HarnessError::Solver(_) | HarnessError::Agent(_) => 4,
            HarnessError::Aborted { .. } => 5,
            HarnessError::Io { .. } | HarnessError::Format(_) => 6,
        }
    }
}
