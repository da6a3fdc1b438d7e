//! Net reproduction operator `Q_lambda`, the Malthusian parameter, the
//! resolvent, the spectral projection and long-time diagnostics.

use std::io::{self, Write};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::evolution::{mild_values, PropagatorCache};
use crate::linalg::{norm_l1, Matrix};
use crate::model::Scenario;
use crate::renewal::RenewalKernel;
use crate::semigroup::OneStepMap;
use crate::state::{AgeDensity, StateVector};
use crate::Scalar;

/// Distance of `r(Q_lambda)` from 1 below which the resolvent is refused.
pub const COLLISION_THRESHOLD: f64 = 1e-8;

/// `Q_lambda = sum_j w_j e^{-lambda a_j} b(a_j) Pi(a_j, 0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct QOperator<T> {
    pub lambda: T,
    pub matrix: Matrix<T>,
}

/// Settings for the Perron power iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerIteration<T> {
    pub tol: T,
    pub max_iter: usize,
}

impl<T: Scalar> Default for PowerIteration<T> {
    fn default() -> Self {
        Self {
            tol: T::lit(1e-12).max(T::epsilon() * T::lit(100.0)),
            max_iter: 10_000,
        }
    }
}

/// Kernels `K_j` with their quadrature weights, reused across `lambda`.
struct QAssembler<T> {
    kernel: RenewalKernel<T>,
    weights: Vec<T>,
    ages: Vec<T>,
    dim: usize,
}

impl<T: Scalar> QAssembler<T> {
    fn new(s: &Scenario<T>, cache: &PropagatorCache<T>) -> Self {
        let grid = s.age_grid();
        Self {
            kernel: RenewalKernel::new(s, cache),
            weights: (0..grid.n_nodes()).map(|j| grid.birth_weight(j)).collect(),
            ages: (0..grid.n_nodes()).map(|j| grid.node(j)).collect(),
            dim: s.dim(),
        }
    }

    /// `sum_j w_j f(a_j) K_j`.
    fn weighted(&self, f: impl Fn(T) -> T) -> Matrix<T> {
        let mut q = Matrix::zeros(self.dim, self.dim);
        for (j, (&w, &a)) in self.weights.iter().zip(&self.ages).enumerate() {
            let c = w * f(a);
            if c != T::zero() {
                q.add_scaled(c, self.kernel.get(j).expect("kernel index within grid"));
            }
        }
        q
    }

    fn q(&self, lambda: T) -> Matrix<T> {
        self.weighted(|a| (-lambda * a).exp())
    }
}

pub fn assemble_q<T: Scalar>(
    s: &Scenario<T>,
    cache: &PropagatorCache<T>,
    lambda: T,
) -> QOperator<T> {
    QOperator {
        lambda,
        matrix: QAssembler::new(s, cache).q(lambda),
    }
}

/// Perron root and eigenvector of a nonnegative matrix by power iteration
/// from the all-ones vector. The eigenvector has unit L1 norm.
pub fn spectral_radius<T: Scalar>(
    q: &Matrix<T>,
    settings: PowerIteration<T>,
) -> Result<(T, StateVector<T>)> {
    perron(q, vec![T::one(); q.rows()], settings)
}

fn perron<T: Scalar>(
    q: &Matrix<T>,
    start: Vec<T>,
    settings: PowerIteration<T>,
) -> Result<(T, StateVector<T>)> {
    let n = q.rows();
    let mut x = start;
    let s = norm_l1(&x);
    x.iter_mut().for_each(|v| *v /= s);
    let mut y = vec![T::zero(); n];
    let mut residual = T::infinity();
    for _ in 0..settings.max_iter {
        q.mul_vec_into(&x, &mut y);
        let r = norm_l1(&y);
        if r == T::zero() {
            return Ok((T::zero(), x.into()));
        }
        residual = x
            .iter()
            .zip(&y)
            .fold(T::zero(), |acc, (&xi, &yi)| acc + (yi - r * xi).abs());
        if residual <= settings.tol * r {
            y.iter_mut().for_each(|v| *v /= r);
            return Ok((r, y.into()));
        }
        for (xi, &yi) in x.iter_mut().zip(&y) {
            *xi = yi / r;
        }
    }
    Err(Error::NoConvergence {
        iterations: settings.max_iter,
        residual: residual.to_f64().unwrap_or(f64::NAN),
    })
}

/// Perron eigenvector of `Q^T`, scaled so that `weight * <zeta', zeta> = 1`.
pub fn dual_eigenfunctional<T: Scalar>(
    q: &Matrix<T>,
    zeta: &[T],
    weight: T,
    settings: PowerIteration<T>,
) -> Result<StateVector<T>> {
    let (_, mut dual) = spectral_radius(&q.transpose(), settings)?;
    let pairing = weight * crate::linalg::dot(&dual, zeta);
    if !(pairing > T::zero()) {
        return Err(Error::NonPositiveNormalization {
            denom: pairing.to_f64().unwrap_or(f64::NAN),
        });
    }
    dual.iter_mut().for_each(|v| *v /= pairing);
    Ok(dual)
}

/// Everything the projection and the stability analysis need.
#[derive(Clone, Debug, Serialize)]
pub struct SpectralData<T> {
    /// Root of `r(Q_lambda) = 1`; also the spectral bound of the generator.
    pub lambda0: T,
    /// Perron vector of `Q_{lambda0}`, unit state norm.
    pub zeta: StateVector<T>,
    /// Perron vector of the transpose, `<zeta', zeta> = 1`.
    pub zeta_dual: StateVector<T>,
    pub r_q0: T,
    /// `r(Q_{lambda0})` as reached by the bisection.
    pub r_at_lambda0: T,
    /// `<zeta', sum_j w_j a_j b(a_j) Pi_{lambda0}(a_j, 0) zeta>`.
    pub denom: T,
    /// Growth-bound estimate of the generator family.
    pub omega_hat: T,
    pub root_tol: T,
}

impl<T: Scalar> SpectralData<T> {
    /// Spectral bound of the generator.
    pub fn s_a(&self) -> T {
        self.lambda0
    }
}

/// Brackets the root of `r(Q_lambda) = 1` by doubling and bisects to
/// `|r - 1| <= tol`.
pub fn find_lambda0<T: Scalar>(
    s: &Scenario<T>,
    cache: &PropagatorCache<T>,
    tol: T,
) -> Result<SpectralData<T>> {
    let asm = QAssembler::new(s, cache);
    let settings = PowerIteration {
        tol: PowerIteration::<T>::default().tol.min(tol),
        ..PowerIteration::default()
    };
    let radius = |lambda: T, start: &[T]| perron(&asm.q(lambda), start.to_vec(), settings);

    let ones = vec![T::one(); s.dim()];
    let (r_q0, zeta0) = radius(T::zero(), &ones)?;
    let limit = T::max_value().ln() * T::lit(0.9) / s.age_grid().a_max();

    let (mut lo, mut hi);
    let mut best = (T::zero(), r_q0, zeta0.into_inner());
    if (r_q0 - T::one()).abs() > tol {
        let up = r_q0 > T::one();
        let mut step = T::one();
        loop {
            if step > limit {
                return Err(Error::BracketNotFound {
                    bound: limit.to_f64().unwrap_or(f64::NAN),
                });
            }
            let probe = if up { step } else { -step };
            let (r, z) = radius(probe, &best.2)?;
            if (r > T::one()) == up && (r - T::one()).abs() > tol {
                best = (probe, r, z.into_inner());
                step *= T::lit(2.0);
                continue;
            }
            if up {
                lo = best.0;
                hi = probe;
            } else {
                lo = probe;
                hi = best.0;
            }
            if (r - T::one()).abs() <= tol {
                best = (probe, r, z.into_inner());
                lo = probe;
                hi = probe;
            }
            break;
        }
        // r is decreasing in lambda: r(lo) > 1 > r(hi).
        while hi - lo > T::epsilon() * T::lit(4.0) * lo.abs().max(hi.abs()).max(T::one()) {
            let mid = (lo + hi) * T::lit(0.5);
            let (r, z) = radius(mid, &best.2)?;
            best = (mid, r, z.into_inner());
            if (r - T::one()).abs() <= tol {
                break;
            }
            if r > T::one() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }

    let (lambda0, r_at_lambda0, zeta_raw) = best;
    let q = asm.q(lambda0);
    let weight = s.component_weight();
    let mut zeta = zeta_raw;
    let zn = weight * norm_l1(&zeta);
    zeta.iter_mut().for_each(|v| *v /= zn);
    let zeta_dual = dual_eigenfunctional(&q, &zeta, weight, settings)?;
    let moment = asm.weighted(|a| a * (-lambda0 * a).exp());
    let denom = s.pairing(&zeta_dual, &moment.mul_vec(&zeta));

    Ok(SpectralData {
        lambda0,
        zeta: zeta.into(),
        zeta_dual,
        r_q0,
        r_at_lambda0,
        denom,
        omega_hat: s.growth_bound(),
        root_tol: tol,
    })
}

/// `H_lambda phi = sum_j w_j b(a_j) sum_{i<j} delta Pi_lambda(a_j, a_i) phi(a_i)`.
pub fn apply_h<T: Scalar>(
    s: &Scenario<T>,
    cache: &PropagatorCache<T>,
    lambda: T,
    phi: &AgeDensity<T>,
) -> Result<StateVector<T>> {
    s.check_density(phi)?;
    let v = mild_values(cache, lambda, &vec![T::zero(); s.dim()], phi);
    Ok(s.birth_integral(&v).into())
}

fn collision_guard<T: Scalar>(q: &Matrix<T>, lambda: T) -> Result<()> {
    let (r, _) = spectral_radius(q, PowerIteration::default())?;
    if (r - T::one()).abs().to_f64().unwrap_or(0.0) < COLLISION_THRESHOLD {
        return Err(Error::EigenvalueCollision {
            lambda: lambda.to_f64().unwrap_or(f64::NAN),
            radius: r.to_f64().unwrap_or(f64::NAN),
            threshold: COLLISION_THRESHOLD,
        });
    }
    Ok(())
}

/// `(lambda - generator)^{-1} phi` through the net reproduction operator:
/// `psi = mild solution with forcing phi and initial value
/// (I - Q_lambda)^{-1} H_lambda phi`.
pub fn resolvent<T: Scalar>(
    s: &Scenario<T>,
    cache: &PropagatorCache<T>,
    lambda: T,
    phi: &AgeDensity<T>,
) -> Result<AgeDensity<T>> {
    s.check_density(phi)?;
    let q = QAssembler::new(s, cache).q(lambda);
    collision_guard(&q, lambda)?;
    let mut lhs = Matrix::identity(s.dim());
    lhs.add_scaled(-T::one(), &q);
    let lu = lhs.lu().ok_or(Error::EigenvalueCollision {
        lambda: lambda.to_f64().unwrap_or(f64::NAN),
        radius: f64::NAN,
        threshold: COLLISION_THRESHOLD,
    })?;
    let mut x = apply_h(s, cache, lambda, phi)?.into_inner();
    lu.solve_in_place(&mut x);
    Ok(mild_values(cache, lambda, &x, phi))
}

/// Truncated Laplace sum `sum_{k=1}^{K} delta e^{-lambda t_k} S(t_k) phi`.
pub fn laplace_transform<T: Scalar>(
    s: &Scenario<T>,
    cache: &PropagatorCache<T>,
    lambda: T,
    phi: &AgeDensity<T>,
    horizon: T,
) -> Result<AgeDensity<T>> {
    s.check_density(phi)?;
    let n = s.age_grid().steps_in(horizon)?;
    let map = OneStepMap::new(s, cache)?;
    let delta = s.delta();
    let mut u = phi.clone();
    let mut acc = s.zero_density();
    for k in 1..=n {
        map.apply(&mut u);
        acc.axpy(delta * (-lambda * T::from_count(k) * delta).exp(), &u);
    }
    Ok(acc)
}

/// Residuals certifying that `psi` lies in the generator's domain with
/// `(lambda - generator) psi = phi`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DomainResiduals<T> {
    /// `||psi - mild_solve(lambda, psi(0), phi)||`.
    pub mild: T,
    /// `||psi(0) - sum_j w_j b(a_j) psi(a_j)||`.
    pub boundary: T,
}

pub fn domain_residuals<T: Scalar>(
    s: &Scenario<T>,
    cache: &PropagatorCache<T>,
    lambda: T,
    psi: &AgeDensity<T>,
    phi: &AgeDensity<T>,
) -> Result<DomainResiduals<T>> {
    s.check_density(psi)?;
    s.check_density(phi)?;
    let mild = mild_values(cache, lambda, psi.node(0), phi);
    let mut bnd = s.birth_integral(psi);
    bnd.iter_mut().zip(psi.node(0)).for_each(|(b, &p)| *b -= p);
    Ok(DomainResiduals {
        mild: s.norm(&psi.sub(&mild)),
        boundary: s.state_norm(&bnd),
    })
}

/// Computes the resolvent and its domain residuals.
pub fn check_generator_domain<T: Scalar>(
    s: &Scenario<T>,
    cache: &PropagatorCache<T>,
    lambda: T,
    phi: &AgeDensity<T>,
) -> Result<(AgeDensity<T>, DomainResiduals<T>)> {
    let psi = resolvent(s, cache, lambda, phi)?;
    let res = domain_residuals(s, cache, lambda, &psi, phi)?;
    Ok((psi, res))
}

/// `a_j -> Pi_{lambda0}(a_j, 0) zeta`, the stable age distribution.
pub fn stable_distribution<T: Scalar>(
    s: &Scenario<T>,
    cache: &PropagatorCache<T>,
    spectral: &SpectralData<T>,
) -> AgeDensity<T> {
    eigenfunction(s, cache, spectral.lambda0, &spectral.zeta)
}

fn eigenfunction<T: Scalar>(
    s: &Scenario<T>,
    cache: &PropagatorCache<T>,
    mu: T,
    psi0: &[T],
) -> AgeDensity<T> {
    let grid = s.age_grid();
    let mut out = s.zero_density();
    for j in 0..grid.n_nodes() {
        let f = (-mu * grid.node(j)).exp();
        let dst = out.node_mut(j);
        cache.from_origin(j).mul_vec_into(psi0, dst);
        dst.iter_mut().for_each(|v| *v *= f);
    }
    out
}

/// `P phi = (<zeta', H_{lambda0} phi> / denom) Pi_{lambda0}(., 0) zeta`.
pub fn spectral_projection<T: Scalar>(
    s: &Scenario<T>,
    cache: &PropagatorCache<T>,
    spectral: &SpectralData<T>,
    phi: &AgeDensity<T>,
) -> Result<AgeDensity<T>> {
    let c = projection_coefficient(s, cache, spectral, phi)?;
    let mut out = stable_distribution(s, cache, spectral);
    out.scale(c);
    Ok(out)
}

/// The scalar multiple of the stable distribution that `P phi` equals.
pub fn projection_coefficient<T: Scalar>(
    s: &Scenario<T>,
    cache: &PropagatorCache<T>,
    spectral: &SpectralData<T>,
    phi: &AgeDensity<T>,
) -> Result<T> {
    if !(spectral.denom > T::zero()) {
        return Err(Error::NonPositiveNormalization {
            denom: spectral.denom.to_f64().unwrap_or(f64::NAN),
        });
    }
    let h = apply_h(s, cache, spectral.lambda0, phi)?;
    Ok(s.pairing(&spectral.zeta_dual, &h) / spectral.denom)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EigenpairResidual<T> {
    /// `||Q_mu psi0 - psi0|| / ||psi0||`.
    pub q_residual: T,
    /// Boundary defect of `psi(a) = Pi_mu(a, 0) psi0`, relative to `||psi0||`.
    pub boundary_residual: T,
}

/// Tests whether `mu` is an eigenvalue with boundary value `psi0`.
pub fn verify_eigenpair<T: Scalar>(
    s: &Scenario<T>,
    cache: &PropagatorCache<T>,
    mu: T,
    psi0: &[T],
) -> Result<EigenpairResidual<T>> {
    if psi0.len() != s.dim() {
        return Err(Error::GridMismatch(format!(
            "boundary value has {} components, expected {}",
            psi0.len(),
            s.dim()
        )));
    }
    let scale = s.state_norm(psi0);
    let q = QAssembler::new(s, cache).q(mu);
    let mut qr = q.mul_vec(psi0);
    qr.iter_mut().zip(psi0).for_each(|(v, &p)| *v -= p);
    let psi = eigenfunction(s, cache, mu, psi0);
    let mut br = s.birth_integral(&psi);
    br.iter_mut().zip(psi.node(0)).for_each(|(v, &p)| *v -= p);
    Ok(EigenpairResidual {
        q_residual: s.state_norm(&qr) / scale,
        boundary_residual: s.state_norm(&br) / scale,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    StableExponential,
    StableNeutral,
    Unstable,
}

impl Stability {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stability::StableExponential => "stable_exponential",
            Stability::StableNeutral => "stable_neutral",
            Stability::Unstable => "unstable",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TrichotomyVerdict<T> {
    pub tag: Stability,
    pub r_q0: T,
    pub lambda0: Option<T>,
}

/// Classifies the zero equilibrium by `r(Q_0)` against 1 with band `tol`.
pub fn classify_stability<T: Scalar>(
    s: &Scenario<T>,
    cache: &PropagatorCache<T>,
    tol: T,
) -> Result<TrichotomyVerdict<T>> {
    let q0 = assemble_q(s, cache, T::zero());
    let (r_q0, _) = spectral_radius(&q0.matrix, PowerIteration::default())?;
    let tag = if (r_q0 - T::one()).abs() <= tol {
        Stability::StableNeutral
    } else if r_q0 < T::one() {
        Stability::StableExponential
    } else {
        Stability::Unstable
    };
    let lambda0 = match find_lambda0(
        s,
        cache,
        PowerIteration::<T>::default().tol.max(tol * T::lit(1e-2)),
    ) {
        Ok(d) => Some(d.lambda0),
        Err(e) => {
            log::warn!("Malthusian parameter not computed: {e}");
            None
        }
    };
    Ok(TrichotomyVerdict { tag, r_q0, lambda0 })
}

/// Residual curve `R(t_k) = ||e^{-lambda0 t_k} S(t_k) phi - P phi||` with an
/// exponential fit `R ~ N e^{-eps t}`.
#[derive(Clone, Debug, Serialize)]
pub struct AegReport<T> {
    pub times: Vec<T>,
    pub residuals: Vec<T>,
    /// Roundoff level of the residual.
    pub floor: T,
    /// Growth per unit time of the error floor caused by the uncertainty in
    /// `lambda0`; residuals below `floor + drift t` are left out of the fit.
    pub drift: T,
    pub fit_points: usize,
    pub epsilon: Option<T>,
    pub n_const: Option<T>,
    /// The residual reached the floor before the fitting window.
    pub converged_early: bool,
}

impl<T: Scalar> AegReport<T> {
    /// Fitted decay rate is positive, or the residual hit the floor first.
    pub fn passed(&self) -> bool {
        self.converged_early || self.epsilon.is_some_and(|e| e > T::zero())
    }

    /// Level below which the residual at `t` carries no information.
    pub fn floor_at(&self, t: T) -> T {
        self.floor + self.drift * t
    }

    /// Residual at the snapshot closest to `t`.
    pub fn residual_at(&self, t: T) -> Option<T> {
        self.times
            .iter()
            .zip(&self.residuals)
            .min_by(|a, b| {
                (*a.0 - t)
                    .abs()
                    .partial_cmp(&(*b.0 - t).abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .map(|(_, &r)| r)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,residual")?;
        for (t, r) in self.times.iter().zip(&self.residuals) {
            writeln!(w, "{t},{r}")?;
        }
        Ok(())
    }
}

/// Least-squares fit of `ln R` against `t` over the trailing `window`.
pub fn aeg_report<T: Scalar>(
    s: &Scenario<T>,
    cache: &PropagatorCache<T>,
    spectral: &SpectralData<T>,
    phi: &AgeDensity<T>,
    horizon: T,
    window: T,
) -> Result<AegReport<T>> {
    s.check_density(phi)?;
    let n = s.age_grid().steps_in(horizon)?;
    let map = OneStepMap::new(s, cache)?;
    let target = spectral_projection(s, cache, spectral, phi)?;
    let delta = s.delta();
    let scale = s.norm(&target).max(s.norm(phi));
    let floor = T::epsilon() * T::lit(1e3) * scale;
    // An error d in lambda0 shows up as t |d| ||P phi|| in the residual; |d|
    // is about the radius defect over dr/dlambda = -denom.
    let radius_defect =
        (spectral.r_at_lambda0 - T::one()).abs() + PowerIteration::<T>::default().tol;
    let drift = T::lit(2.0) * radius_defect / spectral.denom.abs() * s.norm(&target);

    let mut u = phi.clone();
    let mut times = Vec::with_capacity(n + 1);
    let mut residuals = Vec::with_capacity(n + 1);
    for k in 0..=n {
        if k > 0 {
            map.apply(&mut u);
        }
        let t = T::from_count(k) * delta;
        let mut scaled = u.scaled((-spectral.lambda0 * t).exp());
        scaled.axpy(-T::one(), &target);
        times.push(t);
        residuals.push(s.norm(&scaled));
    }

    let start = horizon - window;
    let in_window = |t: T| t >= start - delta * T::lit(0.5);
    let mut pts: Vec<(T, T)> = times
        .iter()
        .zip(&residuals)
        .filter(|(&t, &r)| in_window(t) && r > floor + drift * t)
        .map(|(&t, &r)| (t, r.ln()))
        .collect();
    let converged_early = pts.len() < 3;
    if converged_early {
        pts = times
            .iter()
            .zip(&residuals)
            .filter(|(&t, &r)| r > floor + drift * t)
            .map(|(&t, &r)| (t, r.ln()))
            .collect();
    }
    let (epsilon, n_const) = match least_squares(&pts) {
        Some((slope, intercept)) => (Some(-slope), Some(intercept.exp())),
        None => (None, None),
    };
    Ok(AegReport {
        times,
        residuals,
        floor,
        drift,
        fit_points: pts.len(),
        epsilon,
        n_const,
        converged_early,
    })
}

fn least_squares<T: Scalar>(pts: &[(T, T)]) -> Option<(T, T)> {
    if pts.len() < 2 {
        return None;
    }
    let n = T::from_count(pts.len());
    let mt = pts.iter().map(|p| p.0).sum::<T>() / n;
    let my = pts.iter().map(|p| p.1).sum::<T>() / n;
    let sxx: T = pts.iter().map(|p| (p.0 - mt) * (p.0 - mt)).sum();
    let sxy: T = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    if sxx == T::zero() {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, my - slope * mt))
}

/// Growth rate `ln|mu_2| / delta` of the one-step map on the complement of
/// the dominant mode, by deflated power iteration over `steps` steps.
pub fn subdominant_growth_rate<T: Scalar>(
    s: &Scenario<T>,
    cache: &PropagatorCache<T>,
    spectral: &SpectralData<T>,
    steps: usize,
) -> Result<T> {
    let map = OneStepMap::new(s, cache)?;
    let grid = s.age_grid();
    let mut x = s.density_from_fn(|a, i| {
        T::one() + a + T::lit(0.37) * T::from_count(i) + (T::lit(7.0) * a).sin()
    });
    let deflate = |x: &mut AgeDensity<T>| -> Result<()> {
        let p = spectral_projection(s, cache, spectral, x)?;
        x.axpy(-T::one(), &p);
        Ok(())
    };
    deflate(&mut x)?;
    let warmup = steps / 2;
    let mut log_growth = T::zero();
    for k in 0..steps {
        map.apply(&mut x);
        deflate(&mut x)?;
        let nx = s.norm(&x);
        if nx == T::zero() {
            return Ok(T::neg_infinity());
        }
        if k >= warmup {
            log_growth += nx.ln();
        }
        x.scale(T::one() / nx);
    }
    let counted = T::from_count((steps - warmup).max(1));
    Ok(log_growth / counted / grid.delta())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::build_propagators;
    use crate::presets;
    use proptest::prelude::*;

    fn setup(b: f64, n: usize) -> (Scenario<f64>, PropagatorCache<f64>) {
        let s = presets::scalar::<f64>(b, 0.0, 1.0, n).unwrap();
        let c = build_propagators(&s).unwrap();
        (s, c)
    }

    #[test]
    fn q_examples() {
        let (s, c) = setup(1.0, 200);
        assert!((assemble_q(&s, &c, 0.0).matrix[(0, 0)] - 1.0).abs() < 1e-14);
        let q1 = assemble_q(&s, &c, 1.0).matrix[(0, 0)];
        assert!((q1 - (1.0 - (-1.0f64).exp())).abs() < 1e-4);
        let (s2, c2) = setup(2.0, 200);
        assert!((assemble_q(&s2, &c2, 0.0).matrix[(0, 0)] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn power_iteration_examples() {
        let (r, z) = spectral_radius(&Matrix::scalar(2.0), PowerIteration::default()).unwrap();
        assert_eq!((r, z[0]), (2.0, 1.0));
        let swap = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let (r, z) = spectral_radius(&swap, PowerIteration::default()).unwrap();
        assert_eq!(r, 1.0);
        assert_eq!(&z[..], &[0.5, 0.5]);
    }

    #[test]
    fn power_iteration_reports_non_convergence() {
        // Periodic matrix started off its Perron vector.
        let q = Matrix::from_rows(&[vec![0.0, 2.0], vec![1.0, 0.0]]);
        let res = perron(
            &q,
            vec![1.0, 0.0],
            PowerIteration {
                tol: 1e-12,
                max_iter: 50,
            },
        );
        assert!(matches!(
            res,
            Err(Error::NoConvergence { iterations: 50, .. })
        ));
    }

    #[test]
    fn symmetric_dual_is_parallel() {
        let q = Matrix::from_rows(&[
            vec![2.0f64, 1.0, 0.0],
            vec![1.0, 3.0, 1.0],
            vec![0.0, 1.0, 1.0],
        ]);
        let (_, z) = spectral_radius(&q, PowerIteration::default()).unwrap();
        let d = dual_eigenfunctional(&q, &z, 1.0, PowerIteration::default()).unwrap();
        let ratio = d[0] / z[0];
        for i in 0..3 {
            assert!((d[i] - ratio * z[i]).abs() < 1e-10);
        }
        assert!((crate::linalg::dot(&d, &z) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn neutral_root_is_zero() {
        let (s, c) = setup(1.0, 200);
        let d = find_lambda0(&s, &c, 1e-12).unwrap();
        assert!(d.lambda0.abs() < 1e-6);
        assert_eq!(&d.zeta[..], &[1.0]);
        assert_eq!(&d.zeta_dual[..], &[1.0]);
    }

    #[test]
    fn lambda0_matches_characteristic_equation() {
        let (s, c) = setup(2.0, 400);
        let d = find_lambda0(&s, &c, 1e-12).unwrap();
        assert!((d.lambda0 - 1.593_624_260).abs() < 1e-3);
        assert!((d.r_at_lambda0 - 1.0).abs() <= 1e-12);
        assert!(d.denom > 0.0);
        let (s, c) = setup(0.5, 400);
        let d = find_lambda0(&s, &c, 1e-12).unwrap();
        assert!((d.lambda0 + 1.256_431_209).abs() < 2e-3);
    }

    #[test]
    fn h_examples() {
        let (s, c) = setup(1.0, 200);
        let ones = s.density_from_fn(|_, _| 1.0);
        let h = apply_h(&s, &c, 1.0, &ones).unwrap()[0];
        assert!((h - (-1.0f64).exp()).abs() < 5e-3);
        assert_eq!(apply_h(&s, &c, 1.0, &s.zero_density()).unwrap()[0], 0.0);
    }

    #[test]
    fn resolvent_of_equilibrium_is_one() {
        let (s, c) = setup(1.0, 200);
        let ones = s.density_from_fn(|_, _| 1.0);
        let psi = resolvent(&s, &c, 1.0, &ones).unwrap();
        assert!(psi.as_slice().iter().all(|v| (v - 1.0).abs() < 5e-3));
        let zero = resolvent(&s, &c, 1.0, &s.zero_density()).unwrap();
        assert_eq!(zero.max_abs(), 0.0);
    }

    #[test]
    fn resolvent_refuses_eigenvalue() {
        let (s, c) = setup(1.0, 200);
        let ones = s.density_from_fn(|_, _| 1.0);
        assert!(matches!(
            resolvent(&s, &c, 0.0, &ones),
            Err(Error::EigenvalueCollision { .. })
        ));
    }

    #[test]
    fn resolvent_is_the_laplace_sum() {
        let s = presets::uniform_diffusion::<f64>(0.1, 0.2, 1.0, 6, 1.0, 50).unwrap();
        let c = build_propagators(&s).unwrap();
        let phi = s.density_from_fn(|a, i| (1.0 + i as f64) * (2.0 - a));
        let lambda = 3.0;
        let psi = resolvent(&s, &c, lambda, &phi).unwrap();
        let lap = laplace_transform(&s, &c, lambda, &phi, 20.0).unwrap();
        assert!(s.norm(&psi.sub(&lap)) <= 1e-10 * s.norm(&psi));
    }

    #[test]
    fn domain_residuals_detect_corruption() {
        let s = presets::uniform_diffusion::<f64>(0.1, 0.0, 1.0, 5, 1.0, 40).unwrap();
        let c = build_propagators(&s).unwrap();
        let phi = s.density_from_fn(|a, i| a + i as f64);
        let (mut psi, res) = check_generator_domain(&s, &c, 2.0, &phi).unwrap();
        assert!(res.mild <= 1e-10 && res.boundary <= 1e-10);
        psi.node_mut(0)[1] += 1.0;
        let bad = domain_residuals(&s, &c, 2.0, &psi, &phi).unwrap();
        // Only psi(0) moved, so the defect is (w_0 b(0) - I) e_1.
        let w0 = s.age_grid().birth_weight(0);
        let expect = s.state_norm(&[0.0, 1.0 - w0, 0.0, 0.0, 0.0]);
        assert!((bad.boundary - expect).abs() < 1e-10);
        assert!(bad.mild > 0.05);
        assert!(bad.boundary > 0.1);
    }

    #[test]
    fn projection_fixes_the_eigenvector() {
        let (s, c) = setup(2.0, 400);
        let d = find_lambda0(&s, &c, 1e-12).unwrap();
        let v = stable_distribution(&s, &c, &d);
        let pv = spectral_projection(&s, &c, &d, &v).unwrap();
        assert!(s.norm(&pv.sub(&v)) <= 1e-8 * s.norm(&v));
        let z = spectral_projection(&s, &c, &d, &s.zero_density()).unwrap();
        assert_eq!(z.max_abs(), 0.0);
    }

    #[test]
    fn eigenpair_checks() {
        let (s, c) = setup(2.0, 200);
        let d = find_lambda0(&s, &c, 1e-12).unwrap();
        let ok = verify_eigenpair(&s, &c, d.lambda0, &d.zeta).unwrap();
        assert!(ok.q_residual <= 1e-11 && ok.boundary_residual <= 1e-11);
        let off = verify_eigenpair(&s, &c, d.lambda0 + 1.0, &d.zeta).unwrap();
        assert!(off.q_residual > 0.1);
        let (s1, c1) = setup(1.0, 200);
        assert!(verify_eigenpair(&s1, &c1, 0.0, &[1.0]).unwrap().q_residual < 5e-3);
    }

    #[test]
    fn trichotomy() {
        for (b, tag) in [
            (0.5, Stability::StableExponential),
            (1.0, Stability::StableNeutral),
            (2.0, Stability::Unstable),
        ] {
            let (s, c) = setup(b, 200);
            let v = classify_stability(&s, &c, 1e-6).unwrap();
            assert_eq!(v.tag, tag);
            assert!((v.r_q0 - b).abs() < 1e-6);
            assert!(v.lambda0.is_some());
        }
    }

    #[test]
    fn pure_mode_has_no_residual() {
        let (s, c) = setup(2.0, 200);
        let d = find_lambda0(&s, &c, 1e-13).unwrap();
        let v = stable_distribution(&s, &c, &d);
        let rep = aeg_report(&s, &c, &d, &v, 4.0, 2.0).unwrap();
        assert!(rep.residuals.iter().all(|&r| r <= 1e-8));
        assert!(rep.passed());
    }

    #[test]
    fn spectral_gap_exists() {
        let (s, c) = setup(2.0, 200);
        let d = find_lambda0(&s, &c, 1e-12).unwrap();
        let rate = subdominant_growth_rate(&s, &c, &d, 2000).unwrap();
        assert!(rate < d.lambda0, "{rate} vs {}", d.lambda0);
    }

    #[test]
    fn least_squares_recovers_line() {
        let pts: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 2.0 - 0.5 * i as f64)).collect();
        let (m, b) = least_squares(&pts).unwrap();
        assert!((m + 0.5).abs() < 1e-14 && (b - 2.0).abs() < 1e-14);
        assert!(least_squares(&pts[..1]).is_none());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn radius_is_decreasing_in_lambda(l1 in -3.0f64..3.0, gap in 0.01f64..3.0) {
            let s = presets::uniform_diffusion::<f64>(0.1, 0.3, 1.0, 4, 1.0, 40).unwrap();
            let c = build_propagators(&s).unwrap();
            let q1 = assemble_q(&s, &c, l1).matrix;
            let q2 = assemble_q(&s, &c, l1 + gap).matrix;
            let (r1, z1) = spectral_radius(&q1, PowerIteration::default()).unwrap();
            let (r2, _) = spectral_radius(&q2, PowerIteration::default()).unwrap();
            prop_assert!(r1 > r2 + 1e-10);
            prop_assert!(z1.is_nonnegative());
            prop_assert!(q1.as_slice().iter().zip(q2.as_slice()).all(|(a, b)| a >= b && *b >= 0.0));
        }

        #[test]
        fn projection_is_idempotent_and_signed(data in prop::collection::vec(0.0f64..5.0, 51 * 3)) {
            let s = presets::uniform_diffusion::<f64>(0.1, 0.1, 1.0, 3, 1.0, 50).unwrap();
            let c = build_propagators(&s).unwrap();
            let d = find_lambda0(&s, &c, 1e-12).unwrap();
            let phi = AgeDensity::from_fn(51, 3, |j, i| data[j * 3 + i]);
            let p = spectral_projection(&s, &c, &d, &phi).unwrap();
            let pp = spectral_projection(&s, &c, &d, &p).unwrap();
            prop_assert!(s.norm(&pp.sub(&p)) <= 1e-8 * s.norm(&p).max(1e-300));
            prop_assert!(projection_coefficient(&s, &c, &d, &phi).unwrap() >= 0.0);
        }
    }
}
