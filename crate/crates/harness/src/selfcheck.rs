//! The acceptance suite at a fixed resolution, plus generic checks on a
//! user scenario. Checks run on a scoped worker pool.

use std::thread;

use agepop::evolution::{build_propagators, build_propagators_with, Stepper};
use agepop::presets;
use agepop::renewal::{birth_consistency, solve_birth};
use agepop::semigroup::{
    apply_perturbed, apply_semigroup, evolve_trajectory, nonlinear_projection, solve_semilinear,
    ConstantMortality, LogisticMortality, OneStepMap, ScaledIdentity,
};
use agepop::spectral::{
    aeg_report, check_generator_domain, classify_stability, find_lambda0, laplace_transform,
    projection_coefficient, resolvent, spectral_projection, stable_distribution, Stability,
};
use agepop::{AgeDensity, PropagatorCache, Scenario};
use anyhow::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::commands::{Loaded, Settings};
use crate::report::{Check, Report};

type Suite = fn(&Settings) -> Result<Vec<Check>>;

pub fn run(scenario: Option<&Loaded>, settings: &Settings) -> Result<Report> {
    let suites: [(usize, Suite); 11] = [
        (1, equilibrium_renewal),
        (2, malthusian_parameter),
        (3, trichotomy),
        (4, semigroup_law),
        (5, positivity),
        (6, resolvent_formula),
        (7, projection),
        (8, asynchronous_growth),
        (9, perturbation),
        (10, semilinear),
        (11, cross_backend),
    ];
    let results: Vec<(usize, Result<Vec<Check>>)> = thread::scope(|scope| {
        let handles: Vec<_> = suites
            .iter()
            .map(|&(n, f)| (n, scope.spawn(move || f(settings))))
            .collect();
        handles
            .into_iter()
            .map(|(n, h)| {
                (
                    n,
                    h.join()
                        .unwrap_or_else(|_| Err(anyhow::anyhow!("check panicked"))),
                )
            })
            .collect()
    });

    let mut report = Report::new("selfcheck");
    for (n, r) in results {
        match r {
            Ok(checks) => {
                for mut c in checks {
                    c.name = format!("criterion {n}: {}", c.name);
                    report.check(c);
                }
            }
            Err(e) => {
                log::error!("criterion {n}: {e:#}");
                report.check(Check::at_least(
                    format!("criterion {n}: ran without error"),
                    0.0,
                    1.0,
                ));
            }
        }
    }

    if let Some(l) = scenario {
        let s = l.file.build(settings.delta)?;
        let cache = build_propagators_with(&s, l.file.grid.stepper)?;
        let phi = l.file.initial(&s)?;
        for mut c in scenario_checks(
            &s,
            &cache,
            &phi,
            l.file.grid.stepper == Stepper::ImplicitEuler,
            settings,
        )? {
            c.name = format!("scenario: {}", c.name);
            report.check(c);
        }
        report = report.with_scenario(&l.path, &l.file, &s);
    }
    Ok(report)
}

/// Checks that hold for any valid scenario.
fn scenario_checks(
    s: &Scenario<f64>,
    cache: &PropagatorCache<f64>,
    phi: &AgeDensity<f64>,
    positive_stepper: bool,
    settings: &Settings,
) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let map = OneStepMap::new(s, cache)?;
    let n = s.n_age();
    let (k, l) = (n / 2, n / 3 + 1);
    let mut joint = phi.clone();
    map.apply_n(&mut joint, k + l);
    let mut split = phi.clone();
    map.apply_n(&mut split, l);
    map.apply_n(&mut split, k);
    let scale = s.norm(phi).max(f64::MIN_POSITIVE);
    out.push(Check::at_most(
        "semigroup law (relative)",
        s.norm(&joint.sub(&split)) / scale,
        1e-12,
    ));

    let mut u = phi.clone();
    let mut traj = vec![u.clone()];
    for _ in 0..n {
        map.apply(&mut u);
        traj.push(u.clone());
    }
    let births = solve_birth(s, cache, phi, None, s.age_grid().a_max())?;
    out.push(Check::at_most(
        "birth consistency",
        birth_consistency(s, &traj, &births)?,
        settings.consistency_tol,
    ));
    if positive_stepper && phi.is_nonnegative() {
        let min = traj
            .iter()
            .map(|u| u.min_entry())
            .fold(f64::INFINITY, f64::min);
        out.push(Check::at_least("minimum density entry", min, -1e-14));
    }
    let (_, dom) = check_generator_domain(s, cache, s.omega_star() + 1.0, phi)?;
    out.push(Check::at_most(
        "domain residual",
        dom.mild.max(dom.boundary),
        settings.consistency_tol,
    ));
    Ok(out)
}

/// Root of `b (1 - e^{-l}) = l`, by bisection.
fn characteristic_root(b: f64) -> f64 {
    let f = |l: f64| {
        if l.abs() < 1e-300 {
            b - 1.0
        } else {
            b * (1.0 - (-l).exp()) / l - 1.0
        }
    };
    let (mut lo, mut hi) = (-50.0, 50.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn scalar(b: f64, n: usize) -> Result<(Scenario<f64>, PropagatorCache<f64>)> {
    let s = presets::scalar(b, 0.0, 1.0, n)?;
    let c = build_propagators(&s)?;
    Ok((s, c))
}

fn diffusion(n_cells: usize, n_age: usize) -> Result<(Scenario<f64>, PropagatorCache<f64>)> {
    let s = presets::uniform_diffusion(0.1, 0.0, 1.0, n_cells, 1.0, n_age)?;
    let c = build_propagators(&s)?;
    Ok((s, c))
}

fn ones(s: &Scenario<f64>) -> AgeDensity<f64> {
    s.density_from_fn(|_, _| 1.0)
}

fn random(s: &Scenario<f64>, rng: &mut ChaCha8Rng, lo: f64) -> AgeDensity<f64> {
    AgeDensity::from_fn(s.age_grid().n_nodes(), s.dim(), |_, _| {
        rng.gen_range(lo..1.0)
    })
}

fn equilibrium_renewal(st: &Settings) -> Result<Vec<Check>> {
    let err = |n: usize, ramp: bool| -> Result<f64> {
        let (s, c) = scalar(1.0, n)?;
        let (phi, horizon) = if ramp {
            (s.density_from_fn(|a, _| 2.0 * a), 1.0)
        } else {
            (ones(&s), 3.0)
        };
        let b = solve_birth(&s, &c, &phi, None, horizon)?;
        Ok((0..b.n_time())
            .map(|k| {
                let t = b.time(k);
                let exact = if ramp { t.exp() - 2.0 * t } else { 1.0 };
                (b.values[k][0] - exact).abs()
            })
            .fold(0.0, f64::max))
    };
    let (e1, e2) = (err(200, false)?, err(400, false)?);
    let (r1, r2) = (err(200, true)?, err(400, true)?);
    let mut out = vec![Check::at_most("max |B - 1|", e1, 5e-3)];
    // Constant data is reproduced to roundoff; the ratio is then meaningless.
    if e1 > 1e-12 {
        out.push(Check::within("halving ratio", e1 / e2, st.ratio_band));
    }
    out.push(Check::within(
        "halving ratio, ramp data",
        r1 / r2,
        st.ratio_band,
    ));
    Ok(out)
}

fn malthusian_parameter(_: &Settings) -> Result<Vec<Check>> {
    let (s, c) = scalar(2.0, 400)?;
    let up = find_lambda0(&s, &c, 1e-12)?.lambda0;
    let (s, c) = scalar(0.5, 400)?;
    let down = find_lambda0(&s, &c, 1e-12)?.lambda0;
    Ok(vec![
        Check::at_most(
            "lambda0 (b = 2) vs oracle",
            (up - characteristic_root(2.0)).abs(),
            1e-3,
        ),
        Check::at_most(
            "lambda0 (b = 0.5) vs oracle",
            (down - characteristic_root(0.5)).abs(),
            2e-3,
        ),
    ])
}

fn trichotomy(_: &Settings) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for (b, want) in [
        (0.5, Stability::StableExponential),
        (1.0, Stability::StableNeutral),
        (2.0, Stability::Unstable),
    ] {
        let (s, c) = scalar(b, 200)?;
        let v = classify_stability(&s, &c, 1e-6)?;
        out.push(Check::at_most(
            format!("|r(Q_0) - {b}|"),
            (v.r_q0 - b).abs(),
            1e-6,
        ));
        out.push(Check::at_least(
            format!("verdict {} for b = {b}", want.as_str()),
            if v.tag == want { 1.0 } else { 0.0 },
            1.0,
        ));
    }
    Ok(out)
}

fn semigroup_law(_: &Settings) -> Result<Vec<Check>> {
    let (s, c) = diffusion(16, 100)?;
    let map = OneStepMap::new(&s, &c)?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let phi = random(&s, &mut rng, 0.0);
        let (k, l) = (rng.gen_range(0..80), rng.gen_range(0..80));
        let mut joint = phi.clone();
        map.apply_n(&mut joint, k + l);
        let mut split = phi.clone();
        map.apply_n(&mut split, l);
        map.apply_n(&mut split, k);
        worst = worst.max(s.norm(&joint.sub(&split)) / s.norm(&phi));
    }
    Ok(vec![Check::at_most(
        "||M^(k+l) phi - M^k M^l phi|| / ||phi||",
        worst,
        1e-12,
    )])
}

fn positivity(_: &Settings) -> Result<Vec<Check>> {
    let (s, c) = diffusion(16, 100)?;
    let map = OneStepMap::new(&s, &c)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let steps = s.age_grid().steps_in(4.0)?;
    let mut min = f64::INFINITY;
    for _ in 0..10 {
        let mut u = random(&s, &mut rng, 0.0);
        for _ in 0..steps {
            map.apply(&mut u);
            min = min.min(u.min_entry());
        }
    }
    Ok(vec![Check::at_least(
        "minimum entry up to t = 4",
        min,
        -1e-14,
    )])
}

fn resolvent_formula(st: &Settings) -> Result<Vec<Check>> {
    let (s, c) = scalar(1.0, 200)?;
    let psi = resolvent(&s, &c, 1.0, &ones(&s))?;
    let (s3, c3) = diffusion(16, 100)?;
    let phi = random(&s3, &mut ChaCha8Rng::seed_from_u64(6), 0.0);
    let psi3 = resolvent(&s3, &c3, 3.0, &phi)?;
    let lap = laplace_transform(&s3, &c3, 3.0, &phi, 12.0)?;
    let (_, dom) = check_generator_domain(&s3, &c3, 2.0, &phi)?;
    Ok(vec![
        Check::at_most("||psi - 1||", s.norm(&psi.sub(&ones(&s))), 5e-3),
        Check::at_most(
            "Laplace residual at lambda = 3",
            s3.norm(&psi3.sub(&lap)) / s3.norm(&psi3),
            1e-3,
        ),
        Check::at_most(
            "domain residual",
            dom.mild.max(dom.boundary),
            st.consistency_tol,
        ),
    ])
}

fn projection(_: &Settings) -> Result<Vec<Check>> {
    let (s, c) = scalar(2.0, 400)?;
    let d = find_lambda0(&s, &c, 1e-12)?;
    let l = characteristic_root(2.0);
    let denom = 2.0 * (1.0 - (-l).exp() * (1.0 + l)) / (l * l);
    let coeff = projection_coefficient(&s, &c, &d, &ones(&s))?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let phi = random(&s, &mut rng, -1.0);
        let p = spectral_projection(&s, &c, &d, &phi)?;
        let pp = spectral_projection(&s, &c, &d, &p)?;
        worst = worst.max(s.norm(&pp.sub(&p)) / s.norm(&p));
    }
    Ok(vec![
        Check::at_most(
            "relative error of c",
            (coeff / ((1.0 / l) / denom) - 1.0).abs(),
            0.01,
        ),
        Check::at_most(
            "relative error of denom",
            (d.denom / denom - 1.0).abs(),
            0.01,
        ),
        Check::at_most("idempotence", worst, 1e-8),
    ])
}

fn asynchronous_growth(_: &Settings) -> Result<Vec<Check>> {
    let (s, c) = scalar(2.0, 400)?;
    let d = find_lambda0(&s, &c, 1e-12)?;
    let rep = aeg_report(&s, &c, &d, &ones(&s), 8.0, 4.0)?;
    let r4 = rep.residual_at(4.0).unwrap_or(f64::NAN);
    let r8 = rep.residual_at(8.0).unwrap_or(f64::NAN);
    let pure = aeg_report(&s, &c, &d, &stable_distribution(&s, &c, &d), 8.0, 4.0)?;
    Ok(vec![
        Check::below("R(8) / R(4)", r8 / r4, 0.2),
        Check::above("fitted epsilon", rep.epsilon.unwrap_or(f64::NAN), 0.0),
        Check::at_most(
            "eigen-direction residual",
            pure.residuals.iter().cloned().fold(0.0, f64::max),
            1e-8,
        ),
    ])
}

fn damped_error(n: usize, semilinear: bool) -> Result<f64> {
    let (s, c) = scalar(1.0, n)?;
    let phi = ones(&s);
    let got = if semilinear {
        solve_semilinear(&s, &c, &ConstantMortality(0.5), &phi, 1.0, n)?
            .last()
            .density
            .clone()
    } else {
        apply_perturbed(&s, &c, &ScaledIdentity(-0.5), 1.0, &phi)?
    };
    let oracle = apply_semigroup(&s, &c, 1.0, &phi)?.scaled((-0.5f64).exp());
    Ok(s.norm(&got.sub(&oracle)))
}

fn perturbation(st: &Settings) -> Result<Vec<Check>> {
    let (e1, e2) = (damped_error(200, false)?, damped_error(400, false)?);
    Ok(vec![
        Check::at_most("||T(1)phi - e^-0.5 S(1)phi||", e1, 5e-3),
        Check::within("halving ratio", e1 / e2, st.ratio_band),
    ])
}

fn semilinear(st: &Settings) -> Result<Vec<Check>> {
    let (e1, e2) = (damped_error(200, true)?, damped_error(400, true)?);
    let (s, c) = scalar(2.0, 200)?;
    let d = find_lambda0(&s, &c, 1e-12)?;
    let m = LogisticMortality { rate: 1.0 };
    let tr = solve_semilinear(&s, &c, &m, &ones(&s), 20.0, 20)?;
    let peak = tr.snapshots.iter().map(|p| p.total).fold(0.0, f64::max);
    let limit = nonlinear_projection(&s, &c, &d, &m, &ones(&s), 20.0)?;
    let gap = |t: f64| -> Result<f64> {
        let k = s.age_grid().steps_in(t)?;
        let snap = tr
            .snapshots
            .iter()
            .find(|p| p.step == k)
            .ok_or_else(|| anyhow::anyhow!("no snapshot at t = {t}"))?;
        Ok(snap
            .density
            .scaled((-d.lambda0 * t).exp())
            .sub(&limit)
            .max_abs())
    };
    Ok(vec![
        Check::at_most("constant mortality vs damped oracle", e1, 5e-3),
        Check::within("constant mortality halving ratio", e1 / e2, st.ratio_band),
        Check::below("logistic peak total", peak, 10.0),
        Check::below("scaled gap at t = 8 over t = 4", gap(8.0)? / gap(4.0)?, 1.0),
    ])
}

fn cross_backend(_: &Settings) -> Result<Vec<Check>> {
    let (s1, c1) = scalar(1.0, 200)?;
    let (s3, c3) = diffusion(16, 200)?;
    let t1 = evolve_trajectory(&s1, &c1, &ones(&s1), 4.0, 10)?;
    let t3 = evolve_trajectory(&s3, &c3, &ones(&s3), 4.0, 10)?;
    let worst = t1
        .snapshots
        .iter()
        .zip(&t3.snapshots)
        .map(|(a, b)| (a.total - b.total).abs())
        .fold(0.0, f64::max);
    Ok(vec![Check::at_most("max total difference", worst, 1e-6)])
}
