//! Scenario files: `[grid]`, `[coefficients]` and `[run]` sections of
//! `key = value` lines. `#` starts a comment.
//!
//! Numeric keys accept constant expressions (`delta = 1/400`). Coefficients
//! are expressions in `a` and `x`: `d`, `m`, `b` for the diffusion backend,
//! `A`, `b` (scalar) or `A[i][j]`, `b[i][j]` for the matrix backend, where
//! missing entries are zero.

use std::collections::BTreeMap;
use std::sync::Arc;

use agepop::evolution::Stepper;
use agepop::linalg::Matrix;
use agepop::{AgeDensity, AgeGrid, Backend, Coefficients, Scenario, ScenarioConfig, SpaceGrid};
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::expr::{self, EvalError, Expr};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("line {line}: `{key}`: {source}")]
    Eval {
        line: usize,
        key: String,
        source: EvalError,
    },
    #[error("{0}")]
    Missing(String),
    #[error("invalid scenario: {0}")]
    Model(#[from] agepop::Error),
}

fn syntax<T>(line: usize, column: usize, message: impl Into<String>) -> Result<T, ScenarioError> {
    Err(ScenarioError::Syntax {
        line,
        column,
        message: message.into(),
    })
}

/// An expression together with where it was written.
#[derive(Clone, Debug, PartialEq)]
pub struct Located {
    pub expr: Expr,
    pub key: String,
    pub line: usize,
}

impl Located {
    fn eval(&self, a: f64, x: f64) -> Result<f64, ScenarioError> {
        self.expr.eval(a, x).map_err(|source| ScenarioError::Eval {
            line: self.line,
            key: self.key.clone(),
            source,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NonlinearKind {
    None,
    Constant,
    Logistic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub backend: Backend,
    pub a_max: f64,
    pub n_age: Option<usize>,
    pub delta: Option<f64>,
    pub x_min: f64,
    pub x_max: f64,
    pub n_cells: usize,
    pub dim: usize,
    pub infinite_age: bool,
    pub stepper: Stepper,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSpec {
    /// One expression for every component, or one per component.
    pub phi: Vec<Located>,
    pub horizon: f64,
    pub stride: usize,
    pub lambda: Option<f64>,
    pub window: Option<f64>,
    pub nonlinear: NonlinearKind,
    pub nonlinear_rate: f64,
    pub holder_rho: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioFile {
    pub grid: GridSpec,
    pub coefficients: BTreeMap<String, Located>,
    pub run: RunSpec,
    /// SHA-256 of the file text, hex encoded.
    pub hash: String,
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Grid,
    Coefficients,
    Run,
}

struct RawEntry {
    value: String,
    line: usize,
    column: usize,
}

struct Raw {
    grid: BTreeMap<String, RawEntry>,
    coefficients: BTreeMap<String, RawEntry>,
    run: BTreeMap<String, RawEntry>,
}

const GRID_KEYS: &[&str] = &[
    "backend",
    "a_max",
    "n_age",
    "delta",
    "x_min",
    "x_max",
    "n_cells",
    "dim",
    "infinite_age",
    "stepper",
];
const RUN_KEYS: &[&str] = &[
    "phi",
    "T",
    "stride",
    "lambda",
    "window",
    "nonlinear",
    "nonlinear_rate",
    "holder_rho",
];

fn split_lines(text: &str) -> Result<Raw, ScenarioError> {
    let mut raw = Raw {
        grid: BTreeMap::new(),
        coefficients: BTreeMap::new(),
        run: BTreeMap::new(),
    };
    let mut section = None;
    for (i, full) in text.lines().enumerate() {
        let line = i + 1;
        let body = full.split('#').next().unwrap_or("");
        let trimmed = body.trim();
        if trimmed.is_empty() {
            continue;
        }
        let indent = body.len() - body.trim_start().len();
        if let Some(name) = trimmed.strip_prefix('[') {
            let Some(name) = name.strip_suffix(']') else {
                return syntax(line, indent + trimmed.len(), "expected `]`");
            };
            section = Some(match name.trim() {
                "grid" => Section::Grid,
                "coefficients" => Section::Coefficients,
                "run" => Section::Run,
                other => return syntax(line, indent + 2, format!("unknown section `{other}`")),
            });
            continue;
        }
        let Some(eq) = body.find('=') else {
            return syntax(line, indent + 1, "expected `key = value`");
        };
        let key = body[..eq].trim().to_string();
        if key.is_empty() {
            return syntax(line, eq + 1, "missing key before `=`");
        }
        let rest = &body[eq + 1..];
        let value_col = eq + 2 + (rest.len() - rest.trim_start().len());
        let value = rest.trim().to_string();
        if value.is_empty() {
            return syntax(line, eq + 2, format!("missing value for `{key}`"));
        }
        let map = match section {
            None => return syntax(line, indent + 1, "entry outside of a section"),
            Some(Section::Grid) => {
                if !GRID_KEYS.contains(&key.as_str()) {
                    return syntax(line, indent + 1, format!("unknown grid key `{key}`"));
                }
                &mut raw.grid
            }
            Some(Section::Run) => {
                if !RUN_KEYS.contains(&key.as_str()) && parse_indexed(&key, "phi").is_none() {
                    return syntax(line, indent + 1, format!("unknown run key `{key}`"));
                }
                &mut raw.run
            }
            Some(Section::Coefficients) => &mut raw.coefficients,
        };
        if map.contains_key(&key) {
            return syntax(line, indent + 1, format!("duplicate key `{key}`"));
        }
        map.insert(
            key,
            RawEntry {
                value,
                line,
                column: value_col,
            },
        );
    }
    Ok(raw)
}

/// `name[i]` -> `[i]`, `name[i][j]` -> `[i, j]`.
fn parse_indexed(key: &str, name: &str) -> Option<Vec<usize>> {
    let mut rest = key.strip_prefix(name)?;
    let mut idx = Vec::new();
    while !rest.is_empty() {
        let inner = rest.strip_prefix('[')?;
        let close = inner.find(']')?;
        idx.push(inner[..close].trim().parse().ok()?);
        rest = &inner[close + 1..];
    }
    if idx.is_empty() {
        None
    } else {
        Some(idx)
    }
}

fn expression(key: &str, e: &RawEntry) -> Result<Located, ScenarioError> {
    match expr::parse(&e.value) {
        Ok(expr) => Ok(Located {
            expr,
            key: key.to_string(),
            line: e.line,
        }),
        Err(err) => syntax(e.line, e.column + err.column - 1, err.message),
    }
}

fn number(map: &BTreeMap<String, RawEntry>, key: &str) -> Result<Option<f64>, ScenarioError> {
    let Some(e) = map.get(key) else {
        return Ok(None);
    };
    let loc = expression(key, e)?;
    if !loc.expr.is_constant() {
        return syntax(e.line, e.column, format!("`{key}` must be a constant"));
    }
    loc.eval(0.0, 0.0).map(Some)
}

fn count(map: &BTreeMap<String, RawEntry>, key: &str) -> Result<Option<usize>, ScenarioError> {
    let Some(e) = map.get(key) else {
        return Ok(None);
    };
    match e.value.parse() {
        Ok(v) => Ok(Some(v)),
        Err(_) => syntax(
            e.line,
            e.column,
            format!("`{key}` must be a nonnegative integer"),
        ),
    }
}

fn word<'a>(
    map: &'a BTreeMap<String, RawEntry>,
    key: &str,
    allowed: &[&str],
) -> Result<Option<&'a str>, ScenarioError> {
    let Some(e) = map.get(key) else {
        return Ok(None);
    };
    if allowed.contains(&e.value.as_str()) {
        Ok(Some(e.value.as_str()))
    } else {
        syntax(
            e.line,
            e.column,
            format!("`{key}` must be one of {}", allowed.join(", ")),
        )
    }
}

pub fn parse_scenario(text: &str) -> Result<ScenarioFile, ScenarioError> {
    let raw = split_lines(text)?;
    let g = &raw.grid;
    let backend = match word(g, "backend", &["matrix", "diffusion1d"])? {
        Some("diffusion1d") => Backend::Diffusion1d,
        Some(_) => Backend::Matrix,
        None => return Err(ScenarioError::Missing("[grid] needs `backend`".into())),
    };
    let stepper = match word(g, "stepper", &["implicit_euler", "crank_nicolson"])? {
        Some("crank_nicolson") => Stepper::CrankNicolson,
        _ => Stepper::ImplicitEuler,
    };
    let infinite_age = word(g, "infinite_age", &["true", "false"])? == Some("true");
    let grid = GridSpec {
        backend,
        a_max: number(g, "a_max")?
            .ok_or_else(|| ScenarioError::Missing("[grid] needs `a_max`".into()))?,
        n_age: count(g, "n_age")?,
        delta: number(g, "delta")?,
        x_min: number(g, "x_min")?.unwrap_or(0.0),
        x_max: number(g, "x_max")?.unwrap_or(1.0),
        n_cells: count(g, "n_cells")?.unwrap_or(32),
        dim: count(g, "dim")?.unwrap_or(1),
        infinite_age,
        stepper,
    };
    if grid.n_age.is_some() && grid.delta.is_some() {
        let e = &g["delta"];
        return syntax(e.line, 1, "give either `n_age` or `delta`, not both");
    }

    let mut coefficients = BTreeMap::new();
    for (key, e) in &raw.coefficients {
        let allowed = match backend {
            Backend::Diffusion1d => matches!(key.as_str(), "d" | "m" | "b"),
            Backend::Matrix => {
                let scalar = grid.dim == 1 && matches!(key.as_str(), "A" | "b");
                let entry = ["A", "b"].iter().any(|n| {
                    parse_indexed(key, n)
                        .is_some_and(|ix| ix.len() == 2 && ix[0] < grid.dim && ix[1] < grid.dim)
                });
                scalar || entry
            }
        };
        if !allowed {
            return syntax(
                e.line,
                1,
                format!("unexpected coefficient `{key}` for this backend"),
            );
        }
        let loc = expression(key, e)?;
        if backend == Backend::Matrix && !loc.expr.is_age_only() {
            return syntax(e.line, e.column, format!("`{key}` may depend on `a` only"));
        }
        coefficients.insert(key.clone(), loc);
    }
    let required: &[&str] = match backend {
        Backend::Diffusion1d => &["d", "m", "b"],
        Backend::Matrix => &[],
    };
    for k in required {
        if !coefficients.contains_key(*k) {
            return Err(ScenarioError::Missing(format!(
                "[coefficients] needs `{k}`"
            )));
        }
    }
    if backend == Backend::Matrix && !coefficients.keys().any(|k| k.starts_with('b')) {
        return Err(ScenarioError::Missing(
            "[coefficients] needs a birth entry".into(),
        ));
    }

    let r = &raw.run;
    let n_comp = match backend {
        Backend::Matrix => grid.dim,
        Backend::Diffusion1d => 1,
    };
    let mut phi = Vec::new();
    if let Some(e) = r.get("phi") {
        phi.push(expression("phi", e)?);
    } else {
        for i in 0..n_comp {
            let key = format!("phi[{i}]");
            match r.get(&key) {
                Some(e) => phi.push(expression(&key, e)?),
                None => {
                    return Err(ScenarioError::Missing(format!(
                        "[run] needs `phi` or `phi[0]` .. `phi[{}]`",
                        n_comp - 1
                    )))
                }
            }
        }
    }
    for (key, e) in r {
        if let Some(ix) = parse_indexed(key, "phi") {
            if backend != Backend::Matrix
                || ix.len() != 1
                || ix[0] >= n_comp
                || r.contains_key("phi")
            {
                return syntax(e.line, 1, format!("unexpected initial-data entry `{key}`"));
            }
        }
    }
    let nonlinear = match word(r, "nonlinear", &["none", "constant", "logistic"])? {
        Some("constant") => NonlinearKind::Constant,
        Some("logistic") => NonlinearKind::Logistic,
        _ => NonlinearKind::None,
    };
    let run = RunSpec {
        phi,
        horizon: number(r, "T")?.unwrap_or(4.0),
        stride: count(r, "stride")?.unwrap_or(1),
        lambda: number(r, "lambda")?,
        window: number(r, "window")?,
        nonlinear,
        nonlinear_rate: number(r, "nonlinear_rate")?.unwrap_or(0.0),
        holder_rho: number(r, "holder_rho")?,
    };

    Ok(ScenarioFile {
        grid,
        coefficients,
        run,
        hash: format!("{:x}", Sha256::digest(text.as_bytes())),
    })
}

fn field(loc: &Located) -> Arc<dyn Fn(f64, f64) -> f64 + Send + Sync> {
    let e = loc.expr.clone();
    Arc::new(move |a, x| e.eval(a, x).unwrap_or(f64::NAN))
}

impl ScenarioFile {
    /// The age grid, with `delta` overriding the file.
    pub fn age_grid(&self, delta: Option<f64>) -> Result<AgeGrid<f64>, ScenarioError> {
        Ok(match (delta.or(self.grid.delta), self.grid.n_age) {
            (Some(d), _) if delta.is_some() || self.grid.n_age.is_none() => {
                AgeGrid::from_step(d, self.grid.a_max)?
            }
            (_, n) => AgeGrid::new(self.grid.a_max, n.unwrap_or(200))?,
        })
    }

    fn positions(&self) -> Vec<f64> {
        match self.grid.backend {
            Backend::Matrix => vec![0.0],
            Backend::Diffusion1d => {
                let g = SpaceGrid::new(self.grid.x_min, self.grid.x_max, self.grid.n_cells);
                g.map(|g| (0..g.n_cells()).map(|i| g.center(i)).collect())
                    .unwrap_or_default()
            }
        }
    }

    /// Evaluates every coefficient at every age node, age midpoint and cell
    /// center so that failures are reported against the file.
    fn validate(&self, age: &AgeGrid<f64>) -> Result<(), ScenarioError> {
        let xs = self.positions();
        let ages = (0..age.n_nodes())
            .map(|j| age.node(j))
            .chain((1..age.n_nodes()).map(|j| age.midpoint(j)));
        for a in ages {
            for loc in self.coefficients.values() {
                for &x in &xs {
                    loc.eval(a, x)?;
                }
            }
        }
        Ok(())
    }

    pub fn config(&self, delta: Option<f64>) -> Result<ScenarioConfig<f64>, ScenarioError> {
        let age = self.age_grid(delta)?;
        self.validate(&age)?;
        let coefficients = match self.grid.backend {
            Backend::Diffusion1d => Coefficients::Diffusion {
                space: SpaceGrid::new(self.grid.x_min, self.grid.x_max, self.grid.n_cells)?,
                diffusivity: field(&self.coefficients["d"]),
                mortality: field(&self.coefficients["m"]),
                birth: field(&self.coefficients["b"]),
            },
            Backend::Matrix => Coefficients::Matrix {
                dim: self.grid.dim,
                generator: self.matrix_field("A"),
                birth: self.matrix_field("b"),
            },
        };
        Ok(ScenarioConfig {
            age,
            coefficients,
            infinite_age: self.grid.infinite_age,
            holder_rho: self.run.holder_rho,
        })
    }

    fn matrix_field(&self, name: &str) -> agepop::model::MatrixField<f64> {
        let dim = self.grid.dim;
        let mut entries: Vec<Option<Expr>> = vec![None; dim * dim];
        for (key, loc) in &self.coefficients {
            if key == name {
                entries[0] = Some(loc.expr.clone());
            } else if let Some(ix) = parse_indexed(key, name) {
                entries[ix[0] * dim + ix[1]] = Some(loc.expr.clone());
            }
        }
        Arc::new(move |a| {
            Matrix::from_fn(dim, dim, |i, j| match &entries[i * dim + j] {
                Some(e) => e.eval(a, 0.0).unwrap_or(f64::NAN),
                None => 0.0,
            })
        })
    }

    pub fn build(&self, delta: Option<f64>) -> Result<Scenario<f64>, ScenarioError> {
        Ok(agepop::build_scenario(self.config(delta)?)?)
    }

    /// Initial density sampled at the age nodes (and cell centers).
    pub fn initial(&self, s: &Scenario<f64>) -> Result<AgeDensity<f64>, ScenarioError> {
        let xs = self.positions();
        let grid = s.age_grid();
        let mut u = s.zero_density();
        for j in 0..grid.n_nodes() {
            let a = grid.node(j);
            let node = u.node_mut(j);
            for (c, v) in node.iter_mut().enumerate() {
                let (loc, x) = match self.grid.backend {
                    Backend::Diffusion1d => (&self.run.phi[0], xs[c]),
                    Backend::Matrix => (self.run.phi.get(c).unwrap_or(&self.run.phi[0]), 0.0),
                };
                *v = loc.eval(a, x)?;
            }
        }
        Ok(u)
    }
}
