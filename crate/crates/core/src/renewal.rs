//! Volterra renewal equation for the birth output `B(t) = u(t, 0)`.

use std::io::{self, Write};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::evolution::PropagatorCache;
use crate::linalg::{Lu, Matrix, Operator};
use crate::model::Scenario;
use crate::state::{AgeDensity, StateVector};
use crate::Scalar;

/// Sampled renewal kernel `K_j = b(a_j) Pi(a_j, 0)`, zero beyond `a_max`.
#[derive(Clone, Debug)]
pub struct RenewalKernel<T> {
    kernels: Vec<Matrix<T>>,
}

impl<T: Scalar> RenewalKernel<T> {
    pub fn new(s: &Scenario<T>, cache: &PropagatorCache<T>) -> Self {
        let kernels = (0..s.age_grid().n_nodes())
            .map(|j| s.birth(j).mul_matrix(cache.from_origin(j)))
            .collect();
        Self { kernels }
    }

    /// `K_j`, or `None` for ages past the truncation.
    pub fn get(&self, j: usize) -> Option<&Matrix<T>> {
        self.kernels.get(j)
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }
}

/// Solver for `(I - delta/2 b(0)) y = r`, the implicit part of the
/// trapezoid rule at age zero.
#[derive(Clone, Debug)]
pub(crate) enum BoundarySolve<T> {
    Dense(Lu<T>),
    Diagonal(Vec<T>),
}

impl<T: Scalar> BoundarySolve<T> {
    pub(crate) fn new(s: &Scenario<T>) -> Result<Self> {
        let half = s.delta() * T::lit(0.5);
        let b0 = s.birth(0);
        let coarse = half * b0.norm_l1();
        if coarse >= T::one() {
            return Err(Error::CoarseBoundaryStep {
                value: coarse.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(match b0 {
            Operator::Diagonal(d) => BoundarySolve::Diagonal(
                d.iter()
                    .map(|&v| T::one() / (T::one() - half * v))
                    .collect(),
            ),
            Operator::Dense(m) => {
                let mut lhs = Matrix::identity(m.rows());
                lhs.add_scaled(-half, m);
                // Invertible by the Neumann series since ||half * b(0)|| < 1.
                BoundarySolve::Dense(lhs.lu().expect("I - delta/2 b(0) is invertible"))
            }
        })
    }

    pub(crate) fn solve_in_place(&self, r: &mut [T]) {
        match self {
            BoundarySolve::Dense(lu) => lu.solve_in_place(r),
            BoundarySolve::Diagonal(inv) => {
                r.iter_mut().zip(inv).for_each(|(v, &d)| *v *= d);
            }
        }
    }
}

/// Birth output `B(t_k)` at `t_k = k delta`, `k = 0..=n_time`.
#[derive(Clone, Debug, Serialize)]
pub struct BirthTrajectory<T> {
    pub delta: T,
    pub values: Vec<StateVector<T>>,
}

impl<T: Scalar> BirthTrajectory<T> {
    pub fn n_time(&self) -> usize {
        self.values.len().saturating_sub(1)
    }

    pub fn time(&self, k: usize) -> T {
        T::from_count(k) * self.delta
    }

    /// CSV with header `t,B0,B1,...`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let dim = self.values.first().map_or(0, |v| v.len());
        write!(w, "t")?;
        for i in 0..dim {
            write!(w, ",B{i}")?;
        }
        writeln!(w)?;
        for (k, v) in self.values.iter().enumerate() {
            write!(w, "{}", self.time(k))?;
            for x in v.iter() {
                write!(w, ",{x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Marches the discrete renewal equation up to `horizon`.
///
/// `B_0 = sum_j w_j b_j phi_j + h_0` and, for `k >= 1`,
///
/// ```text
/// (I - delta/2 b_0) B_k = sum_{j=1}^{min(k-1,N)} w_j K_j B_{k-j}
///                       + sum_{j=k}^{N} w_j b_j Pi(a_j, a_{j-k}) phi_{j-k} + h_k
/// ```
///
/// with trapezoid weights `w_j`. The `j = k` term carries `phi_0` along its
/// characteristic, so the history sum stops at `k - 1`.
pub fn solve_birth<T: Scalar>(
    s: &Scenario<T>,
    cache: &PropagatorCache<T>,
    phi: &AgeDensity<T>,
    h: Option<&[Vec<T>]>,
    horizon: T,
) -> Result<BirthTrajectory<T>> {
    s.check_density(phi)?;
    let grid = s.age_grid();
    let n_time = grid.steps_in(horizon)?;
    let n = grid.n_age();
    let dim = s.dim();
    if let Some(h) = h {
        if h.len() != n_time + 1 || h.iter().any(|v| v.len() != dim) {
            return Err(Error::GridMismatch(format!(
                "inhomogeneity needs {} samples of dimension {dim}",
                n_time + 1
            )));
        }
    }
    let boundary = BoundarySolve::new(s)?;
    let kernel = RenewalKernel::new(s, cache);

    let mut values: Vec<StateVector<T>> = Vec::with_capacity(n_time + 1);
    let mut b0 = s.birth_integral(phi);
    if let Some(h) = h {
        add(&mut b0, &h[0]);
    }
    values.push(b0.into());

    // transported[j] = Pi(a_j, a_{j-k}) phi_{j-k} for j >= k.
    let mut transported = phi.clone();
    let mut scratch = vec![T::zero(); dim];
    for k in 1..=n_time {
        let mut rhs = vec![T::zero(); dim];
        for j in (k.max(1)..=n).rev() {
            let (lo, hi) = transported.as_mut_slice().split_at_mut(j * dim);
            let prev = &lo[(j - 1) * dim..];
            let cur = &mut hi[..dim];
            cur.copy_from_slice(prev);
            cache.apply_step(j, cur, &mut scratch);
            s.birth(j).apply_acc(grid.birth_weight(j), cur, &mut rhs);
        }
        for j in 1..=(k - 1).min(n) {
            let kj = kernel.get(j).expect("kernel index within grid");
            kj.mul_vec_acc(grid.birth_weight(j), &values[k - j], &mut rhs);
        }
        if let Some(h) = h {
            add(&mut rhs, &h[k]);
        }
        boundary.solve_in_place(&mut rhs);
        values.push(rhs.into());
    }

    Ok(BirthTrajectory {
        delta: grid.delta(),
        values,
    })
}

fn add<T: Scalar>(acc: &mut [T], x: &[T]) {
    acc.iter_mut().zip(x).for_each(|(a, &b)| *a += b);
}

/// `max_k ||B_k - sum_j w_j b_j u_k(a_j)|| / (1 + ||B_k||)` where `u_k` is the
/// semigroup trajectory at step `k`.
pub fn birth_consistency<T: Scalar>(
    s: &Scenario<T>,
    trajectory: &[AgeDensity<T>],
    births: &BirthTrajectory<T>,
) -> Result<T> {
    if trajectory.len() != births.values.len() {
        return Err(Error::GridMismatch(format!(
            "trajectory has {} steps, birth output has {}",
            trajectory.len(),
            births.values.len()
        )));
    }
    let mut worst = T::zero();
    for (u, b) in trajectory.iter().zip(&births.values) {
        s.check_density(u)?;
        let mut diff = s.birth_integral(u);
        diff.iter_mut().zip(b.iter()).for_each(|(d, &x)| *d -= x);
        let r = s.state_norm(&diff) / (T::one() + s.state_norm(b));
        worst = worst.max(r);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::build_propagators;
    use crate::presets;
    use proptest::prelude::*;

    #[test]
    fn equilibrium_birth_rate_is_constant() {
        let s = presets::scalar::<f64>(1.0, 0.0, 1.0, 200).unwrap();
        let c = build_propagators(&s).unwrap();
        let phi = s.density_from_fn(|_, _| 1.0);
        let b = solve_birth(&s, &c, &phi, None, 3.0).unwrap();
        assert_eq!(b.n_time(), 600);
        for v in &b.values {
            assert!((v[0] - 1.0).abs() < 5e-3);
        }
    }

    #[test]
    fn zero_data_gives_zero_births() {
        let s = presets::uniform_diffusion::<f64>(0.1, 0.0, 1.0, 8, 1.0, 40).unwrap();
        let c = build_propagators(&s).unwrap();
        let b = solve_birth(&s, &c, &s.zero_density(), None, 2.0).unwrap();
        assert!(b.values.iter().all(|v| v.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn misaligned_horizon_is_rejected() {
        let s = presets::scalar::<f64>(1.0, 0.0, 1.0, 200).unwrap();
        let c = build_propagators(&s).unwrap();
        let phi = s.density_from_fn(|_, _| 1.0);
        assert!(matches!(
            solve_birth(&s, &c, &phi, None, 0.0123),
            Err(Error::TimeNotAligned { .. })
        ));
    }

    #[test]
    fn inhomogeneity_shape_is_checked() {
        let s = presets::scalar::<f64>(1.0, 0.0, 1.0, 10).unwrap();
        let c = build_propagators(&s).unwrap();
        let h = vec![vec![1.0]; 3];
        assert!(solve_birth(&s, &c, &s.zero_density(), Some(&h), 1.0).is_err());
    }

    #[test]
    fn inhomogeneous_equation_converges_to_exponential() {
        // phi = 0 and h = 1 on SC1: B(t) = 1 + int_0^t B, so B(t) = e^t on [0, 1].
        let err = |n: usize| {
            let s = presets::scalar::<f64>(1.0, 0.0, 1.0, n).unwrap();
            let c = build_propagators(&s).unwrap();
            let h = vec![vec![1.0]; n + 1];
            let b = solve_birth(&s, &c, &s.zero_density(), Some(&h), 1.0).unwrap();
            (0..=n)
                .map(|k| (b.values[k][0] - (k as f64 / n as f64).exp()).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(200), err(400));
        assert!(e1 < 1e-2);
        assert!((1.7..=2.3).contains(&(e1 / e2)), "{e1} {e2}");
    }

    #[test]
    fn csv_export() {
        let s = presets::scalar::<f64>(1.0, 0.0, 1.0, 4).unwrap();
        let c = build_propagators(&s).unwrap();
        let phi = s.density_from_fn(|_, _| 1.0);
        let b = solve_birth(&s, &c, &phi, None, 0.5).unwrap();
        let mut buf = Vec::new();
        b.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "t,B0");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("0,"));
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let s = presets::scalar::<f64>(50.0, 0.0, 1.0, 10).unwrap();
        let c = build_propagators(&s).unwrap();
        let phi = s.density_from_fn(|_, _| 1.0);
        assert!(matches!(
            solve_birth(&s, &c, &phi, None, 1.0),
            Err(Error::CoarseBoundaryStep { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn linearity_positivity_and_growth_bound(
            p1 in prop::collection::vec(0.0f64..2.0, 41 * 4),
            p2 in prop::collection::vec(0.0f64..2.0, 41 * 4),
            alpha in -2.0f64..2.0,
            beta in -2.0f64..2.0,
        ) {
            let s = presets::uniform_diffusion::<f64>(0.1, 0.3, 1.0, 4, 1.0, 40).unwrap();
            let c = build_propagators(&s).unwrap();
            let phi1 = AgeDensity::from_fn(41, 4, |j, i| p1[j * 4 + i]);
            let phi2 = AgeDensity::from_fn(41, 4, |j, i| p2[j * 4 + i]);
            let mut combo = phi1.scaled(alpha);
            combo.axpy(beta, &phi2);
            let b1 = solve_birth(&s, &c, &phi1, None, 2.0).unwrap();
            let b2 = solve_birth(&s, &c, &phi2, None, 2.0).unwrap();
            let bc = solve_birth(&s, &c, &combo, None, 2.0).unwrap();
            // Discrete growth bound with constant 1: ||B_k|| <= c q^{k-1} ||phi||
            // where c = ||b|| / (1 - delta ||b(0)|| / 2), q = 1 + delta c, and
            // ||P_j|| <= 1 because the growth bound is nonpositive.
            let c0 = s.birth_norm() / (1.0 - s.delta() * s.birth_norm() / 2.0);
            let q = 1.0 + s.delta() * c0;
            prop_assert!(s.growth_bound() <= 0.0);
            let norm_phi = s.norm(&phi1);
            for k in 0..=b1.n_time() {
                let scale = b1.values[k].iter().chain(b2.values[k].iter())
                    .fold(1.0f64, |m, v| m.max(v.abs()));
                for i in 0..4 {
                    let expect = alpha * b1.values[k][i] + beta * b2.values[k][i];
                    prop_assert!((bc.values[k][i] - expect).abs() <= 1e-12 * scale * 4.0);
                    prop_assert!(b1.values[k][i] >= 0.0);
                }
                if k >= 1 {
                    let bound = c0 * q.powi(k as i32 - 1) * norm_phi;
                    prop_assert!(s.state_norm(&b1.values[k]) <= bound * (1.0 + 1e-12));
                }
            }
        }
    }
}
