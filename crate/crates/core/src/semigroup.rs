//! The population semigroup `S(t)`, its Duhamel perturbation and the
//! semilinear flow with density-dependent mortality.

use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::evolution::PropagatorCache;
use crate::model::Scenario;
use crate::renewal::{BirthTrajectory, BoundarySolve};
use crate::spectral::{spectral_projection, SpectralData};
use crate::state::AgeDensity;
use crate::Scalar;

/// One time step `u(t_k) -> u(t_k + delta)`: every cohort ages by one node
/// (`u_j <- P_j u_{j-1}`) and the newborns solve the trapezoid birth law
/// `u_0 = sum_j w_j b_j u_j`.
#[derive(Clone, Debug)]
pub struct OneStepMap<'a, T> {
    scenario: &'a Scenario<T>,
    cache: &'a PropagatorCache<T>,
    boundary: BoundarySolve<T>,
}

impl<'a, T: Scalar> OneStepMap<'a, T> {
    pub fn new(scenario: &'a Scenario<T>, cache: &'a PropagatorCache<T>) -> Result<Self> {
        if cache.n_age() != scenario.n_age() || cache.dim() != scenario.dim() {
            return Err(Error::GridMismatch(
                "propagator cache was built for a different scenario".into(),
            ));
        }
        Ok(Self {
            scenario,
            cache,
            boundary: BoundarySolve::new(scenario)?,
        })
    }

    pub fn scenario(&self) -> &'a Scenario<T> {
        self.scenario
    }

    pub fn cache(&self) -> &'a PropagatorCache<T> {
        self.cache
    }

    /// Applies the map in place.
    pub fn apply(&self, u: &mut AgeDensity<T>) {
        let s = self.scenario;
        let grid = s.age_grid();
        let dim = s.dim();
        let mut scratch = vec![T::zero(); dim];
        let mut newborn = vec![T::zero(); dim];
        for j in (1..=grid.n_age()).rev() {
            let (lo, hi) = u.as_mut_slice().split_at_mut(j * dim);
            let cur = &mut hi[..dim];
            cur.copy_from_slice(&lo[(j - 1) * dim..]);
            self.cache.apply_step(j, cur, &mut scratch);
            s.birth(j)
                .apply_acc(grid.birth_weight(j), cur, &mut newborn);
        }
        self.boundary.solve_in_place(&mut newborn);
        u.node_mut(0).copy_from_slice(&newborn);
    }

    pub fn apply_n(&self, u: &mut AgeDensity<T>, k: usize) {
        for _ in 0..k {
            self.apply(u);
        }
    }
}

/// `S(t) phi = M^k phi` with `t = k delta`.
pub fn apply_semigroup<T: Scalar>(
    s: &Scenario<T>,
    cache: &PropagatorCache<T>,
    t: T,
    phi: &AgeDensity<T>,
) -> Result<AgeDensity<T>> {
    s.check_density(phi)?;
    let k = s.age_grid().steps_in(t)?;
    let map = OneStepMap::new(s, cache)?;
    let mut u = phi.clone();
    map.apply_n(&mut u, k);
    Ok(u)
}

/// Evaluates `S(t_k) phi` directly from the characteristics formula given
/// the birth output: `Pi(a_j, a_j - t) phi(a_j - t)` for `a_j >= t` and
/// `Pi(a_j, 0) B(t - a_j)` for `a_j < t`.
pub fn evaluate_characteristics<T: Scalar>(
    s: &Scenario<T>,
    cache: &PropagatorCache<T>,
    births: &BirthTrajectory<T>,
    phi: &AgeDensity<T>,
    k: usize,
) -> Result<AgeDensity<T>> {
    s.check_density(phi)?;
    if k > births.n_time() {
        return Err(Error::GridMismatch(format!(
            "birth output covers {} steps, requested {k}",
            births.n_time()
        )));
    }
    let dim = s.dim();
    let mut out = s.zero_density();
    let mut scratch = vec![T::zero(); dim];
    for j in 0..s.age_grid().n_nodes() {
        let dst = out.node_mut(j);
        if j >= k {
            dst.copy_from_slice(phi.node(j - k));
            for i in j - k + 1..=j {
                cache.apply_step(i, dst, &mut scratch);
            }
        } else {
            cache
                .from_origin(j)
                .mul_vec_into(&births.values[k - j], dst);
        }
    }
    Ok(out)
}

/// A density at a snapshot time together with its total population.
#[derive(Clone, Debug)]
pub struct Snapshot<T> {
    pub step: usize,
    pub t: T,
    pub density: AgeDensity<T>,
    /// Age-space norm of the positive part.
    pub total: T,
}

#[derive(Clone, Debug)]
pub struct Trajectory<T> {
    pub delta: T,
    pub snapshots: Vec<Snapshot<T>>,
}

impl<T: Scalar> Trajectory<T> {
    fn record(s: &Scenario<T>, step: usize, u: &AgeDensity<T>) -> Snapshot<T> {
        Snapshot {
            step,
            t: T::from_count(step) * s.delta(),
            density: u.clone(),
            total: s.norm(&u.positive_part()),
        }
    }

    pub fn last(&self) -> &Snapshot<T> {
        self.snapshots
            .last()
            .expect("trajectory has at least the initial snapshot")
    }

    /// Long-format CSV: `t,a,cell,value`.
    pub fn write_csv<W: Write>(&self, s: &Scenario<T>, mut w: W) -> io::Result<()> {
        writeln!(w, "t,a,cell,value")?;
        let grid = s.age_grid();
        for snap in &self.snapshots {
            for j in 0..snap.density.n_nodes() {
                let a = grid.node(j);
                for (i, v) in snap.density.node(j).iter().enumerate() {
                    writeln!(w, "{},{},{},{}", snap.t, a, i, v)?;
                }
            }
        }
        Ok(())
    }

    /// `t,total,boundary_norm` per snapshot.
    pub fn write_summary_csv<W: Write>(&self, s: &Scenario<T>, mut w: W) -> io::Result<()> {
        writeln!(w, "t,total,boundary_norm")?;
        for snap in &self.snapshots {
            writeln!(
                w,
                "{},{},{}",
                snap.t,
                snap.total,
                s.state_norm(snap.density.node(0))
            )?;
        }
        Ok(())
    }
}

fn validate_stride(stride: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::InvalidGrid(
            "output stride must be at least 1".into(),
        ));
    }
    Ok(stride)
}

/// Marches `M` up to `horizon`, keeping every `stride`-th step and the final
/// one.
pub fn evolve_trajectory<T: Scalar>(
    s: &Scenario<T>,
    cache: &PropagatorCache<T>,
    phi: &AgeDensity<T>,
    horizon: T,
    stride: usize,
) -> Result<Trajectory<T>> {
    s.check_density(phi)?;
    let n = s.age_grid().steps_in(horizon)?;
    let stride = validate_stride(stride)?;
    let map = OneStepMap::new(s, cache)?;
    let mut u = phi.clone();
    let mut snapshots = vec![Trajectory::record(s, 0, &u)];
    for k in 1..=n {
        map.apply(&mut u);
        if k % stride == 0 || k == n {
            snapshots.push(Trajectory::record(s, k, &u));
        }
    }
    Ok(Trajectory {
        delta: s.delta(),
        snapshots,
    })
}

/// A linear operator on age densities.
pub trait AgeOperator<T> {
    /// `out = self(u)`; `out` has the shape of `u`.
    fn apply(&self, u: &AgeDensity<T>, out: &mut AgeDensity<T>);
}

/// `u -> c u`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaledIdentity<T>(pub T);

impl<T: Scalar> AgeOperator<T> for ScaledIdentity<T> {
    fn apply(&self, u: &AgeDensity<T>, out: &mut AgeDensity<T>) {
        for (o, &v) in out.as_mut_slice().iter_mut().zip(u.as_slice()) {
            *o = self.0 * v;
        }
    }
}

/// Pointwise action of an age-dependent state operator, `(Bu)(a) = B(a) u(a)`.
pub struct AgeLocal<F>(pub F);

impl<T: Scalar, F> AgeOperator<T> for AgeLocal<F>
where
    F: Fn(usize, &[T], &mut [T]),
{
    fn apply(&self, u: &AgeDensity<T>, out: &mut AgeDensity<T>) {
        for j in 0..u.n_nodes() {
            (self.0)(j, u.node(j), out.node_mut(j));
        }
    }
}

/// Perturbed semigroup by discrete Duhamel marching,
/// `T_{k+1} = M (T_k + delta Bop T_k)`.
pub fn apply_perturbed<T: Scalar>(
    s: &Scenario<T>,
    cache: &PropagatorCache<T>,
    bop: &dyn AgeOperator<T>,
    t: T,
    phi: &AgeDensity<T>,
) -> Result<AgeDensity<T>> {
    s.check_density(phi)?;
    let k = s.age_grid().steps_in(t)?;
    let map = OneStepMap::new(s, cache)?;
    let delta = s.delta();
    let mut u = phi.clone();
    let mut bu = s.zero_density();
    for _ in 0..k {
        bop.apply(&u, &mut bu);
        u.axpy(delta, &bu);
        map.apply(&mut u);
    }
    Ok(u)
}

/// Density-dependent mortality `m_nl(u, a) >= 0`.
pub trait NonlinearMortality<T: Scalar> {
    /// Writes `m_nl(u, a_j)` per node and component into `out`.
    fn rates(&self, s: &Scenario<T>, u: &AgeDensity<T>, out: &mut AgeDensity<T>);

    /// Lipschitz constant in `u`, if known.
    fn lipschitz(&self) -> Option<T> {
        None
    }
}

/// `m_nl = c`, independent of the density.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantMortality<T>(pub T);

impl<T: Scalar> NonlinearMortality<T> for ConstantMortality<T> {
    fn rates(&self, _: &Scenario<T>, _: &AgeDensity<T>, out: &mut AgeDensity<T>) {
        out.as_mut_slice().iter_mut().for_each(|v| *v = self.0);
    }

    fn lipschitz(&self) -> Option<T> {
        Some(T::zero())
    }
}

/// `m_nl(u, a) = rate * ||u||`, crowding by the total population.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogisticMortality<T> {
    pub rate: T,
}

impl<T: Scalar> NonlinearMortality<T> for LogisticMortality<T> {
    fn rates(&self, s: &Scenario<T>, u: &AgeDensity<T>, out: &mut AgeDensity<T>) {
        let m = self.rate * s.norm(u);
        out.as_mut_slice().iter_mut().for_each(|v| *v = m);
    }

    fn lipschitz(&self) -> Option<T> {
        Some(self.rate)
    }
}

impl<T: Scalar, M: NonlinearMortality<T> + ?Sized> NonlinearMortality<T> for &M {
    fn rates(&self, s: &Scenario<T>, u: &AgeDensity<T>, out: &mut AgeDensity<T>) {
        (**self).rates(s, u, out)
    }

    fn lipschitz(&self) -> Option<T> {
        (**self).lipschitz()
    }
}

fn checked_rates<T: Scalar>(
    m_nl: &dyn NonlinearMortality<T>,
    s: &Scenario<T>,
    u: &AgeDensity<T>,
    out: &mut AgeDensity<T>,
) -> Result<()> {
    m_nl.rates(s, u, out);
    let dim = s.dim();
    if let Some((idx, &v)) = out
        .as_slice()
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v >= T::zero()))
    {
        return Err(Error::NegativeNonlinearMortality {
            node: idx / dim.max(1),
            value: v.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(())
}

/// Lie splitting: `u^{k+1} = (1 + delta m_nl(u^k))^{-1} M u^k` pointwise.
pub fn solve_semilinear<T: Scalar>(
    s: &Scenario<T>,
    cache: &PropagatorCache<T>,
    m_nl: &dyn NonlinearMortality<T>,
    phi: &AgeDensity<T>,
    horizon: T,
    stride: usize,
) -> Result<Trajectory<T>> {
    let mut snapshots = Vec::new();
    let stride = validate_stride(stride)?;
    march_semilinear(s, cache, m_nl, phi, horizon, |k, n, u, _| {
        if k % stride == 0 || k == n {
            snapshots.push(Trajectory::record(s, k, u));
        }
    })?;
    Ok(Trajectory {
        delta: s.delta(),
        snapshots,
    })
}

/// Runs the semilinear scheme, calling `visit(k, n, u^k, rates(u^{k-1}))`
/// at every step (`k = 0` with zero rates).
fn march_semilinear<T: Scalar>(
    s: &Scenario<T>,
    cache: &PropagatorCache<T>,
    m_nl: &dyn NonlinearMortality<T>,
    phi: &AgeDensity<T>,
    horizon: T,
    mut visit: impl FnMut(usize, usize, &AgeDensity<T>, &AgeDensity<T>),
) -> Result<()> {
    s.check_density(phi)?;
    let n = s.age_grid().steps_in(horizon)?;
    let map = OneStepMap::new(s, cache)?;
    let delta = s.delta();
    let mut u = phi.clone();
    let mut rates = s.zero_density();
    visit(0, n, &u, &rates);
    for k in 1..=n {
        checked_rates(m_nl, s, &u, &mut rates)?;
        map.apply(&mut u);
        for (v, &m) in u.as_mut_slice().iter_mut().zip(rates.as_slice()) {
            *v /= T::one() + delta * m;
        }
        visit(k, n, &u, &rates);
    }
    Ok(())
}

/// `P(phi + sum_{k=1}^K delta e^{-lambda0 t_k} F_k)` with
/// `F_k = -m_nl(u^{k-1}) u^k` from the semilinear scheme, truncated at
/// `t_K = horizon`.
///
/// Because the scheme satisfies `u^k = M u^{k-1} + delta F_k` and `P`
/// commutes with `M`, the result equals `P(e^{-lambda0 t_K} u^K)`.
pub fn nonlinear_projection<T: Scalar>(
    s: &Scenario<T>,
    cache: &PropagatorCache<T>,
    spectral: &SpectralData<T>,
    m_nl: &dyn NonlinearMortality<T>,
    phi: &AgeDensity<T>,
    horizon: T,
) -> Result<AgeDensity<T>> {
    let lambda0 = spectral.lambda0;
    if !(lambda0 > T::zero()) {
        return Err(Error::NonPositiveGrowth {
            lambda0: lambda0.to_f64().unwrap_or(f64::NAN),
        });
    }
    let delta = s.delta();
    let mut forced = phi.clone();
    let mut last = T::zero();
    march_semilinear(s, cache, m_nl, phi, horizon, |k, _, u, rates| {
        if k == 0 {
            return;
        }
        let w = -delta * (-lambda0 * T::from_count(k) * delta).exp();
        for ((f, &v), &m) in forced
            .as_mut_slice()
            .iter_mut()
            .zip(u.as_slice())
            .zip(rates.as_slice())
        {
            *f += w * m * v;
        }
        let integrand: T = u
            .as_slice()
            .iter()
            .zip(rates.as_slice())
            .map(|(&v, &m)| m * v)
            .fold(T::zero(), |acc, x| acc.max(x.abs()));
        last = integrand * (-lambda0 * T::from_count(k) * delta).exp();
    })?;
    log::info!(
        "nonlinear projection truncated at t = {horizon}: tail bound ~ {:e}",
        last / lambda0
    );
    spectral_projection(s, cache, spectral, &forced)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::build_propagators;
    use crate::presets;
    use crate::renewal::solve_birth;
    use proptest::prelude::*;

    fn ones(s: &Scenario<f64>) -> AgeDensity<f64> {
        s.density_from_fn(|_, _| 1.0)
    }

    #[test]
    fn zero_time_is_identity() {
        let s = presets::uniform_diffusion::<f64>(0.1, 0.0, 1.0, 8, 1.0, 20).unwrap();
        let c = build_propagators(&s).unwrap();
        let phi = s.density_from_fn(|a, i| a + i as f64);
        assert_eq!(apply_semigroup(&s, &c, 0.0, &phi).unwrap(), phi);
    }

    #[test]
    fn equilibrium_stays_put() {
        let s = presets::scalar::<f64>(1.0, 0.0, 1.0, 200).unwrap();
        let c = build_propagators(&s).unwrap();
        let u = apply_semigroup(&s, &c, 2.0, &ones(&s)).unwrap();
        assert!(u.as_slice().iter().all(|v| (v - 1.0).abs() < 5e-3));
    }

    #[test]
    fn malthusian_growth_ratio() {
        let s = presets::scalar::<f64>(2.0, 0.0, 1.0, 400).unwrap();
        let c = build_propagators(&s).unwrap();
        let u3 = apply_semigroup(&s, &c, 3.0, &ones(&s)).unwrap();
        let u4 = apply_semigroup(&s, &c, 4.0, &ones(&s)).unwrap();
        let ratio = s.norm(&u4) / s.norm(&u3);
        let expect = 1.593_624_260_f64.exp();
        assert!((ratio / expect - 1.0).abs() < 0.02);
    }

    #[test]
    fn misaligned_time_is_an_error() {
        let s = presets::scalar::<f64>(1.0, 0.0, 1.0, 200).unwrap();
        let c = build_propagators(&s).unwrap();
        assert!(matches!(
            apply_semigroup(&s, &c, 0.3333, &ones(&s)),
            Err(Error::TimeNotAligned { .. })
        ));
    }

    #[test]
    fn trajectory_snapshots() {
        let s = presets::scalar::<f64>(1.0, 0.0, 1.0, 200).unwrap();
        let c = build_propagators(&s).unwrap();
        let tr = evolve_trajectory(&s, &c, &ones(&s), 2.0, 100).unwrap();
        assert_eq!(tr.snapshots.len(), 5);
        assert!(tr.snapshots.iter().all(|p| (p.total - 1.0).abs() < 5e-3));
        let zero = evolve_trajectory(&s, &c, &s.zero_density(), 1.0, 7).unwrap();
        assert!(zero.snapshots.iter().all(|p| p.total == 0.0));
        assert_eq!(zero.last().step, 200);
        assert!(evolve_trajectory(&s, &c, &ones(&s), 1.0, 0).is_err());
    }

    #[test]
    fn trajectory_csv_shapes() {
        let s = presets::uniform_diffusion::<f64>(0.1, 0.0, 1.0, 3, 1.0, 4).unwrap();
        let c = build_propagators(&s).unwrap();
        let tr = evolve_trajectory(&s, &c, &ones(&s), 0.5, 1).unwrap();
        let mut long = Vec::new();
        tr.write_csv(&s, &mut long).unwrap();
        let long = String::from_utf8(long).unwrap();
        assert_eq!(long.lines().count(), 1 + 3 * 5 * 3);
        let mut summary = Vec::new();
        tr.write_summary_csv(&s, &mut summary).unwrap();
        let summary = String::from_utf8(summary).unwrap();
        assert_eq!(summary.lines().next(), Some("t,total,boundary_norm"));
        assert_eq!(summary.lines().count(), 4);
    }

    #[test]
    fn characteristics_formula_matches_one_step_map() {
        let s = presets::uniform_diffusion::<f64>(0.1, 0.2, 1.0, 5, 1.0, 30).unwrap();
        let c = build_propagators(&s).unwrap();
        let phi = s.density_from_fn(|a, i| (1.0 + a) * (1.0 + i as f64).sqrt());
        let b = solve_birth(&s, &c, &phi, None, 1.5).unwrap();
        for k in [0, 1, 10, 30, 45] {
            let direct = evaluate_characteristics(&s, &c, &b, &phi, k).unwrap();
            let mapped = apply_semigroup(&s, &c, k as f64 / 30.0, &phi).unwrap();
            let err = direct.sub(&mapped).max_abs();
            assert!(err <= 1e-12 * mapped.max_abs(), "k = {k}: {err}");
        }
    }

    #[test]
    fn perturbation_by_zero_is_the_semigroup() {
        let s = presets::scalar::<f64>(1.5, 0.0, 1.0, 50).unwrap();
        let c = build_propagators(&s).unwrap();
        let phi = s.density_from_fn(|a, _| 1.0 - a);
        let a = apply_perturbed(&s, &c, &ScaledIdentity(0.0), 1.0, &phi).unwrap();
        assert_eq!(a, apply_semigroup(&s, &c, 1.0, &phi).unwrap());
    }

    #[test]
    fn commuting_perturbation_damps_exponentially() {
        let err = |n: usize| {
            let s = presets::scalar::<f64>(1.0, 0.0, 1.0, n).unwrap();
            let c = build_propagators(&s).unwrap();
            let t = apply_perturbed(&s, &c, &ScaledIdentity(-0.5), 1.0, &ones(&s)).unwrap();
            let mut oracle = apply_semigroup(&s, &c, 1.0, &ones(&s)).unwrap();
            oracle.scale((-0.5f64).exp());
            s.norm(&t.sub(&oracle))
        };
        let (e1, e2) = (err(200), err(400));
        assert!(e1 <= 5e-3);
        assert!((1.7..=2.3).contains(&(e1 / e2)));
    }

    #[test]
    fn nonnegative_perturbation_keeps_cone() {
        let s = presets::uniform_diffusion::<f64>(0.1, 0.1, 1.0, 6, 1.0, 40).unwrap();
        let c = build_propagators(&s).unwrap();
        let shift = AgeLocal(|_: usize, x: &[f64], out: &mut [f64]| {
            let n = x.len();
            for i in 0..n {
                out[i] = 0.3 * x[(i + 1) % n];
            }
        });
        let phi = s.density_from_fn(|a, i| if i == 2 { a } else { 0.0 });
        let u = apply_perturbed(&s, &c, &shift, 2.0, &phi).unwrap();
        assert!(u.is_nonnegative());
    }

    #[test]
    fn zero_mortality_reproduces_linear_flow() {
        let s = presets::scalar::<f64>(2.0, 0.0, 1.0, 100).unwrap();
        let c = build_propagators(&s).unwrap();
        let lin = evolve_trajectory(&s, &c, &ones(&s), 2.0, 50).unwrap();
        let nl = solve_semilinear(&s, &c, &ConstantMortality(0.0), &ones(&s), 2.0, 50).unwrap();
        for (a, b) in lin.snapshots.iter().zip(&nl.snapshots) {
            assert_eq!(a.density, b.density);
        }
    }

    #[test]
    fn negative_mortality_is_rejected() {
        let s = presets::scalar::<f64>(1.0, 0.0, 1.0, 20).unwrap();
        let c = build_propagators(&s).unwrap();
        assert!(matches!(
            solve_semilinear(&s, &c, &ConstantMortality(-1.0), &ones(&s), 1.0, 1),
            Err(Error::NegativeNonlinearMortality { .. })
        ));
    }

    #[test]
    fn logistic_population_stays_bounded() {
        let s = presets::scalar::<f64>(2.0, 0.0, 1.0, 100).unwrap();
        let c = build_propagators(&s).unwrap();
        let m = LogisticMortality { rate: 1.0 };
        let tr = solve_semilinear(&s, &c, &m, &ones(&s), 20.0, 100).unwrap();
        let totals: Vec<f64> = tr.snapshots.iter().map(|p| p.total).collect();
        assert!(totals.iter().all(|t| t.is_finite() && *t < 10.0));
        let tail = &totals[totals.len() - 5..];
        let spread = tail.iter().cloned().fold(f64::MIN, f64::max)
            - tail.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread < 1e-3, "tail {tail:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn semigroup_law_and_positivity(
            data in prop::collection::vec(0.0f64..3.0, 31 * 4),
            k in 0usize..40,
            l in 0usize..40,
        ) {
            let s = presets::uniform_diffusion::<f64>(0.1, 0.2, 1.0, 4, 1.0, 30).unwrap();
            let c = build_propagators(&s).unwrap();
            let map = OneStepMap::new(&s, &c).unwrap();
            let phi = AgeDensity::from_fn(31, 4, |j, i| data[j * 4 + i]);
            let mut joint = phi.clone();
            map.apply_n(&mut joint, k + l);
            let mut split = phi.clone();
            map.apply_n(&mut split, l);
            map.apply_n(&mut split, k);
            prop_assert!(joint.sub(&split).max_abs() <= 1e-12 * s.norm(&phi).max(1e-300));
            prop_assert!(joint.is_nonnegative());
        }

        #[test]
        fn exponential_bound_with_unit_constant(
            data in prop::collection::vec(0.0f64..3.0, 21),
            b in 0.1f64..3.0,
            m in 0.0f64..2.0,
        ) {
            let s = presets::scalar::<f64>(b, m, 1.0, 20).unwrap();
            let c = build_propagators(&s).unwrap();
            let map = OneStepMap::new(&s, &c).unwrap();
            let phi = AgeDensity::from_fn(21, 1, |j, _| data[j]);
            let delta = s.delta();
            let q = (1.0 + delta * s.birth_norm() / (1.0 - delta * s.birth_norm() / 2.0))
                / (1.0 - delta * s.growth_bound());
            let mut u = phi.clone();
            for k in 1..=60 {
                map.apply(&mut u);
                prop_assert!(s.norm(&u) <= q.powi(k) * s.norm(&phi) * (1.0 + 1e-12));
            }
        }
    }
}
