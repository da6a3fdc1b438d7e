use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use agepop::evolution::build_propagators_with;
use agepop::renewal::{birth_consistency, solve_birth, BirthTrajectory};
use agepop::semigroup::{
    evolve_trajectory, solve_semilinear, ConstantMortality, LogisticMortality, NonlinearMortality,
};
use agepop::spectral::{
    aeg_report, check_generator_domain, classify_stability, find_lambda0, laplace_transform,
    resolvent, subdominant_growth_rate, verify_eigenpair,
};
use agepop::{AgeDensity, PropagatorCache, Scenario};
use anyhow::{Context, Result};

use crate::report::{Check, Report};
use crate::scenario::{NonlinearKind, ScenarioFile};
use crate::selfcheck;

/// Tolerances and overrides shared by all commands.
#[derive(Clone, Debug)]
pub struct Settings {
    pub delta: Option<f64>,
    pub horizon: Option<f64>,
    pub out: PathBuf,
    /// Command-specific tolerance; see each command for its default.
    pub tol: Option<f64>,
    pub root_tol: f64,
    pub consistency_tol: f64,
    pub ratio_band: (f64, f64),
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            delta: None,
            horizon: None,
            out: PathBuf::from("out"),
            tol: None,
            root_tol: 1e-10,
            consistency_tol: 1e-10,
            ratio_band: (1.7, 2.3),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Spectral,
    Classify,
    Aeg,
    ResolventCheck,
    Selfcheck,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Spectral => "spectral",
            Command::Classify => "classify",
            Command::Aeg => "aeg",
            Command::ResolventCheck => "resolvent-check",
            Command::Selfcheck => "selfcheck",
        }
    }
}

/// A parsed scenario file and the path it came from.
pub struct Loaded {
    pub path: String,
    pub file: ScenarioFile,
}

struct Prepared<'a> {
    loaded: &'a Loaded,
    s: Scenario<f64>,
    cache: PropagatorCache<f64>,
    phi: AgeDensity<f64>,
}

impl<'a> Prepared<'a> {
    fn new(loaded: &'a Loaded, settings: &Settings) -> Result<Self> {
        let s = loaded.file.build(settings.delta)?;
        let cache = build_propagators_with(&s, loaded.file.grid.stepper)?;
        let phi = loaded.file.initial(&s)?;
        Ok(Prepared {
            loaded,
            s,
            cache,
            phi,
        })
    }

    fn report(&self, cmd: Command) -> Report {
        Report::new(cmd.name()).with_scenario(&self.loaded.path, &self.loaded.file, &self.s)
    }

    /// The requested horizon rounded to a whole number of age steps.
    fn horizon(&self, settings: &Settings) -> f64 {
        let t = settings.horizon.unwrap_or(self.loaded.file.run.horizon);
        let d = self.s.delta();
        (t / d).round() * d
    }
}

fn create(out: &Path, name: &str, report: &mut Report) -> Result<BufWriter<File>> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    report.artifacts.push(path.display().to_string());
    Ok(BufWriter::new(f))
}

pub fn run(cmd: Command, scenario: Option<&Loaded>, settings: &Settings) -> Result<Report> {
    let mut report = match (cmd, scenario) {
        (Command::Selfcheck, sc) => selfcheck::run(sc, settings)?,
        (_, None) => anyhow::bail!("`{}` needs --scenario", cmd.name()),
        (_, Some(l)) => {
            let p = Prepared::new(l, settings)?;
            match cmd {
                Command::Simulate => simulate(&p, settings)?,
                Command::Spectral => spectral(&p, settings)?,
                Command::Classify => classify(&p, settings)?,
                Command::Aeg => aeg(&p, settings)?,
                Command::ResolventCheck => resolvent_check(&p, settings)?,
                Command::Selfcheck => unreachable!(),
            }
        }
    };
    let mut w = create(&settings.out, "report.json", &mut report)?;
    report.write_json(&mut w)?;
    w.flush()?;
    Ok(report)
}

fn simulate(p: &Prepared, settings: &Settings) -> Result<Report> {
    let mut report = p.report(Command::Simulate);
    let run = &p.loaded.file.run;
    let horizon = p.horizon(settings);
    let (s, cache) = (&p.s, &p.cache);
    let trajectory = match run.nonlinear {
        NonlinearKind::None => evolve_trajectory(s, cache, &p.phi, horizon, run.stride)?,
        kind => {
            let m: Box<dyn NonlinearMortality<f64>> = match kind {
                NonlinearKind::Constant => Box::new(ConstantMortality(run.nonlinear_rate)),
                _ => Box::new(LogisticMortality {
                    rate: run.nonlinear_rate,
                }),
            };
            solve_semilinear(s, cache, m.as_ref(), &p.phi, horizon, run.stride)?
        }
    };

    let mut w = create(&settings.out, "trajectory.csv", &mut report)?;
    trajectory.write_csv(s, &mut w)?;
    w.flush()?;
    let mut w = create(&settings.out, "summary.csv", &mut report)?;
    trajectory.write_summary_csv(s, &mut w)?;
    w.flush()?;

    let min_entry = trajectory
        .snapshots
        .iter()
        .map(|snap| snap.density.min_entry())
        .fold(f64::INFINITY, f64::min);
    if p.phi.is_nonnegative() {
        report.check(Check::at_least("minimum density entry", min_entry, -1e-14));
    }
    let last = trajectory.last();
    report.result("final_time", last.t);
    report.result("final_total", last.total);
    report.result("snapshots", trajectory.snapshots.len());

    if run.nonlinear == NonlinearKind::None {
        let births = solve_birth(s, cache, &p.phi, None, horizon)?;
        let mut w = create(&settings.out, "births.csv", &mut report)?;
        births.write_csv(&mut w)?;
        w.flush()?;
        let picked = BirthTrajectory {
            delta: births.delta,
            values: trajectory
                .snapshots
                .iter()
                .map(|snap| births.values[snap.step].clone())
                .collect(),
        };
        let densities: Vec<_> = trajectory
            .snapshots
            .iter()
            .map(|snap| snap.density.clone())
            .collect();
        let c = birth_consistency(s, &densities, &picked)?;
        report.check(Check::at_most(
            "birth rate vs boundary of trajectory",
            c,
            settings.consistency_tol,
        ));
    } else {
        report.check(Check::at_least(
            "final total is finite",
            if last.total.is_finite() { 1.0 } else { 0.0 },
            1.0,
        ));
    }
    Ok(report)
}

fn spectral(p: &Prepared, settings: &Settings) -> Result<Report> {
    let mut report = p.report(Command::Spectral);
    let d = find_lambda0(&p.s, &p.cache, settings.root_tol)?;
    report.check(Check::at_most(
        "|r(Q_lambda0) - 1|",
        (d.r_at_lambda0 - 1.0).abs(),
        settings.root_tol,
    ));
    let pair = verify_eigenpair(&p.s, &p.cache, d.lambda0, &d.zeta)?;
    let eig_tol = 10.0 * settings.root_tol;
    report.check(Check::at_most(
        "eigenpair Q residual",
        pair.q_residual,
        eig_tol,
    ));
    report.check(Check::at_most(
        "eigenpair boundary residual",
        pair.boundary_residual,
        eig_tol,
    ));
    report.check(Check::above("projection normalisation", d.denom, 0.0));
    let steps = 4 * p.s.n_age();
    match subdominant_growth_rate(&p.s, &p.cache, &d, steps) {
        Ok(rate) => {
            report.result("subdominant_rate", rate);
            report.result("spectral_gap", d.lambda0 - rate);
        }
        Err(e) => log::warn!("subdominant rate not computed: {e}"),
    }
    report.result("lambda0", d.lambda0);
    report.result("denom", d.denom);
    report.result("r_q0", d.r_q0);
    let mut w = create(&settings.out, "spectral.json", &mut report)?;
    serde_json::to_writer_pretty(&mut w, &d)?;
    w.flush()?;
    Ok(report)
}

fn classify(p: &Prepared, settings: &Settings) -> Result<Report> {
    let mut report = p.report(Command::Classify);
    let tol = settings.tol.unwrap_or(1e-6);
    let v = classify_stability(&p.s, &p.cache, tol)?;
    report.result("verdict", v.tag.as_str());
    report.result("r_q0", v.r_q0);
    report.result("lambda0", v.lambda0);
    report.result("neutral_band", tol);
    report.check(Check::above("r(Q_0)", v.r_q0, 0.0));
    Ok(report)
}

fn aeg(p: &Prepared, settings: &Settings) -> Result<Report> {
    let mut report = p.report(Command::Aeg);
    let horizon = p.horizon(settings);
    let window = p.loaded.file.run.window.unwrap_or(horizon / 2.0);
    let d = find_lambda0(&p.s, &p.cache, settings.root_tol)?;
    let rep = aeg_report(&p.s, &p.cache, &d, &p.phi, horizon, window)?;
    let mut w = create(&settings.out, "aeg.csv", &mut report)?;
    rep.write_csv(&mut w)?;
    w.flush()?;
    report.result("lambda0", d.lambda0);
    report.result("epsilon", rep.epsilon);
    report.result("n_const", rep.n_const);
    report.result("fit_points", rep.fit_points);
    report.result("floor", rep.floor);
    report.result("floor_drift", rep.drift);
    report.result("converged_early", rep.converged_early);
    if rep.converged_early {
        let last = rep.residuals.last().copied().unwrap_or(f64::NAN);
        report.check(Check::at_most(
            "final residual",
            last,
            rep.floor_at(horizon),
        ));
    } else {
        report.check(Check::above(
            "fitted decay rate epsilon",
            rep.epsilon.unwrap_or(f64::NAN),
            0.0,
        ));
    }
    Ok(report)
}

fn resolvent_check(p: &Prepared, settings: &Settings) -> Result<Report> {
    let mut report = p.report(Command::ResolventCheck);
    let s = &p.s;
    let omega = s.omega_star();
    let lambda = p.loaded.file.run.lambda.unwrap_or(omega + 1.0);
    let tol = settings.tol.unwrap_or(1e-3);
    let psi = resolvent(s, &p.cache, lambda, &p.phi)?;
    let horizon = match settings.horizon {
        Some(_) => p.horizon(settings),
        None => {
            // e^{-(lambda - omega) H} below 1e-12.
            let h = 28.0 / (lambda - omega).max(1e-3);
            (h / s.delta()).ceil() * s.delta()
        }
    };
    let lap = laplace_transform(s, &p.cache, lambda, &p.phi, horizon)?;
    let rel = s.norm(&psi.sub(&lap)) / s.norm(&psi).max(f64::MIN_POSITIVE);
    let (_, dom) = check_generator_domain(s, &p.cache, lambda, &p.phi)?;
    report.result("lambda", lambda);
    report.result("omega_star", omega);
    report.result("laplace_horizon", horizon);
    report.check(Check::at_most("Laplace vs resolvent (relative)", rel, tol));
    report.check(Check::at_most(
        "domain residual (mild form)",
        dom.mild,
        settings.consistency_tol,
    ));
    report.check(Check::at_most(
        "domain residual (boundary)",
        dom.boundary,
        settings.consistency_tol,
    ));

    let mut w = create(&settings.out, "resolvent.csv", &mut report)?;
    writeln!(w, "a,component,resolvent,laplace")?;
    let grid = s.age_grid();
    for j in 0..grid.n_nodes() {
        for (c, (x, y)) in psi.node(j).iter().zip(lap.node(j)).enumerate() {
            writeln!(w, "{},{c},{x},{y}", grid.node(j))?;
        }
    }
    w.flush()?;
    Ok(report)
}
