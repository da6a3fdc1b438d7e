//! Command-line harness: scenario files, experiment commands and reports.

pub mod commands;
pub mod expr;
pub mod report;
pub mod scenario;
pub mod selfcheck;

use std::fs;
use std::path::Path;

use anyhow::Context;

pub use commands::{run, Command, Loaded, Settings};
pub use report::{Check, Report};
pub use scenario::{parse_scenario, ScenarioError, ScenarioFile};

/// Reads and parses a scenario file.
pub fn load(path: &Path) -> anyhow::Result<Loaded> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file = parse_scenario(&text).with_context(|| format!("in {}", path.display()))?;
    Ok(Loaded {
        path: path.display().to_string(),
        file,
    })
}
