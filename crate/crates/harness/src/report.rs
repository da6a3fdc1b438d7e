//! Structured run reports. Every check records the tolerance it was held to.

use std::fmt;
use std::io::{self, Write};

use agepop::Backend;
use serde::Serialize;
use serde_json::Value;

use crate::scenario::ScenarioFile;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Tolerance {
    Bound(f64),
    Band([f64; 2]),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = "<")]
    Below,
    #[serde(rename = ">=")]
    AtLeast,
    #[serde(rename = ">")]
    Above,
    #[serde(rename = "in")]
    Within,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub relation: Relation,
    pub tolerance: Tolerance,
    pub passed: bool,
}

impl Check {
    fn new(name: impl Into<String>, value: f64, relation: Relation, tolerance: Tolerance) -> Self {
        let passed = match (relation, tolerance) {
            (Relation::AtMost, Tolerance::Bound(t)) => value <= t,
            (Relation::Below, Tolerance::Bound(t)) => value < t,
            (Relation::AtLeast, Tolerance::Bound(t)) => value >= t,
            (Relation::Above, Tolerance::Bound(t)) => value > t,
            (Relation::Within, Tolerance::Band([lo, hi])) => (lo..=hi).contains(&value),
            _ => false,
        };
        Check {
            name: name.into(),
            value,
            relation,
            tolerance,
            passed,
        }
    }

    pub fn at_most(name: impl Into<String>, value: f64, tol: f64) -> Self {
        Self::new(name, value, Relation::AtMost, Tolerance::Bound(tol))
    }

    pub fn below(name: impl Into<String>, value: f64, tol: f64) -> Self {
        Self::new(name, value, Relation::Below, Tolerance::Bound(tol))
    }

    pub fn at_least(name: impl Into<String>, value: f64, tol: f64) -> Self {
        Self::new(name, value, Relation::AtLeast, Tolerance::Bound(tol))
    }

    pub fn above(name: impl Into<String>, value: f64, tol: f64) -> Self {
        Self::new(name, value, Relation::Above, Tolerance::Bound(tol))
    }

    pub fn within(name: impl Into<String>, value: f64, band: (f64, f64)) -> Self {
        Self::new(
            name,
            value,
            Relation::Within,
            Tolerance::Band([band.0, band.1]),
        )
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        let rel = match self.relation {
            Relation::AtMost => "<=",
            Relation::Below => "<",
            Relation::AtLeast => ">=",
            Relation::Above => ">",
            Relation::Within => "in",
        };
        match self.tolerance {
            Tolerance::Bound(t) => write!(
                f,
                "[{status}] {}: {:.6e} {rel} {t:e}",
                self.name, self.value
            ),
            Tolerance::Band([lo, hi]) => {
                write!(
                    f,
                    "[{status}] {}: {:.6} {rel} [{lo}, {hi}]",
                    self.name, self.value
                )
            }
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GridMeta {
    pub backend: Backend,
    pub a_max: f64,
    pub n_age: usize,
    pub delta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_cells: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_range: Option<[f64; 2]>,
    pub dim: usize,
}

impl GridMeta {
    pub fn of(s: &agepop::Scenario<f64>) -> Self {
        let space = s.space_grid();
        GridMeta {
            backend: s.backend(),
            a_max: s.age_grid().a_max(),
            n_age: s.n_age(),
            delta: s.delta(),
            n_cells: space.map(|g| g.n_cells()),
            x_range: space.map(|g| [g.x_min(), g.x_max()]),
            dim: s.dim(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ScenarioMeta {
    pub path: String,
    pub hash: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioMeta>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridMeta>,
    pub checks: Vec<Check>,
    pub results: serde_json::Map<String, Value>,
    pub artifacts: Vec<String>,
    pub passed: bool,
}

impl Report {
    pub fn new(command: &str) -> Self {
        Report {
            command: command.to_string(),
            scenario: None,
            grid: None,
            checks: Vec::new(),
            results: serde_json::Map::new(),
            artifacts: Vec::new(),
            passed: true,
        }
    }

    pub fn with_scenario(
        mut self,
        path: &str,
        file: &ScenarioFile,
        s: &agepop::Scenario<f64>,
    ) -> Self {
        self.scenario = Some(ScenarioMeta {
            path: path.to_string(),
            hash: file.hash.clone(),
        });
        self.grid = Some(GridMeta::of(s));
        self
    }

    pub fn check(&mut self, c: Check) {
        self.passed &= c.passed;
        self.checks.push(c);
    }

    pub fn result(&mut self, key: &str, v: impl Serialize) {
        let v = serde_json::to_value(v).unwrap_or(Value::Null);
        self.results.insert(key.to_string(), v);
    }

    pub fn write_json<W: Write>(&self, w: W) -> io::Result<()> {
        serde_json::to_writer_pretty(w, self).map_err(io::Error::other)
    }

    /// One line per check.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&c.to_string());
            out.push('\n');
        }
        out.push_str(if self.passed {
            "all checks passed"
        } else {
            "some checks failed"
        });
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn check_relations() {
        assert!(Check::at_most("r", 1e-11, 1e-10).passed);
        assert!(!Check::at_most("r", 1e-9, 1e-10).passed);
        assert!(!Check::below("r", 0.2, 0.2).passed);
        assert!(Check::above("eps", 0.1, 0.0).passed);
        assert!(!Check::above("eps", f64::NAN, 0.0).passed);
        assert!(Check::within("ratio", 2.0, (1.7, 2.3)).passed);
        assert!(!Check::within("ratio", 1.5, (1.7, 2.3)).passed);
    }

    #[test]
    fn failed_check_fails_report() {
        let mut r = Report::new("x");
        r.check(Check::at_least("a", 1.0, 0.0));
        assert!(r.passed);
        r.check(Check::at_least("b", -1.0, 0.0));
        assert!(!r.passed);
        let mut buf = Vec::new();
        r.write_json(&mut buf).unwrap();
        let v: Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v["checks"][1]["tolerance"], 0.0);
        assert_eq!(v["checks"][1]["relation"], ">=");
        assert_eq!(v["passed"], false);
    }

    #[test]
    fn band_serializes_as_pair() {
        let c = Check::within("ratio", 2.0, (1.7, 2.3));
        let v = serde_json::to_value(&c).unwrap();
        assert_eq!(v["tolerance"], serde_json::json!([1.7, 2.3]));
    }
}
