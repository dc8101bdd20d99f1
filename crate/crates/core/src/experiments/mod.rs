//! Experiment drivers behind the `puftrack` binary.
//!
//! Every driver returns a report carrying a list of [`Check`]s. A failed
//! check maps to exit code 2, a configuration problem to exit code 3.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::scenario::ScenarioError;

mod matrix;
mod prototype;
mod tuning;

pub use matrix::{builtin_scenarios, run_attack_matrix, MatrixReport, SuiteSummary};
pub use prototype::{run_prototype, PrototypeConfig, PrototypeReport};
pub use tuning::{run_tuning, TuningConfig, TuningReport, TuningRow, REDRAW_NOTE};

pub const EXIT_OK: u8 = 0;
pub const EXIT_EXPECTATION: u8 = 2;
pub const EXIT_CONFIG: u8 = 3;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("simulation error: {0}")]
    Run(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ExperimentError {
    pub fn exit_code(&self) -> u8 {
        match self {
            ExperimentError::Config(_) | ExperimentError::Scenario(_) => EXIT_CONFIG,
            ExperimentError::Run(_) | ExperimentError::Io(_) => 1,
        }
    }
}

/// Reads a TOML configuration, reporting the offending line on failure.
pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T, ExperimentError> {
    let file = path.display();
    let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::Config(format!("{file}: {e}")))?;
    toml::from_str(&text).map_err(|e| {
        let line = e
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
            .unwrap_or(1);
        ExperimentError::Config(format!("{file}: line {line}: {}", e.message()))
    })
}

/// One expectation about an experiment's outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }

    /// Compares two counts.
    pub fn count(name: impl Into<String>, expected: usize, observed: usize) -> Self {
        Self::new(name, expected == observed, format!("{observed}/{expected}"))
    }
}

pub fn all_passed(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.passed)
}

pub fn exit_code(checks: &[Check]) -> u8 {
    if all_passed(checks) {
        EXIT_OK
    } else {
        EXIT_EXPECTATION
    }
}
