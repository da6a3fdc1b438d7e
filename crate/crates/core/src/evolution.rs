//! Discrete evolution operators `Pi(a_j, a_i)` and mild solutions of the
//! age Cauchy problem `dv/da = (A(a) - lambda) v + phi`.

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Tridiagonal, TridiagonalLu};
use crate::model::{Generator, Scenario};
use crate::state::{AgeDensity, StateVector};
use crate::Scalar;

/// Time-stepping rule for one age cell.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Stepper {
    /// `(I - delta A)^{-1}`: first order, positivity preserving.
    #[default]
    ImplicitEuler,
    /// `(I - delta/2 A)^{-1} (I + delta/2 A)`: second order, no positivity
    /// guarantee.
    CrankNicolson,
}

/// One step `P_j` approximating `Pi(a_j, a_{j-1})`.
#[derive(Clone, Debug)]
pub enum StepOperator<T> {
    Dense(Matrix<T>),
    /// `x <- L^{-1} (E x)` with `E = I` when `explicit` is absent.
    Tridiagonal {
        implicit: TridiagonalLu<T>,
        explicit: Option<Tridiagonal<T>>,
    },
}

impl<T: Scalar> StepOperator<T> {
    /// Applies the step in place; `scratch` must have the state dimension.
    pub fn apply(&self, x: &mut [T], scratch: &mut [T]) {
        match self {
            StepOperator::Dense(m) => {
                m.mul_vec_into(x, scratch);
                x.copy_from_slice(scratch);
            }
            StepOperator::Tridiagonal { implicit, explicit } => {
                if let Some(e) = explicit {
                    e.mul_vec_into(x, scratch);
                    x.copy_from_slice(scratch);
                }
                implicit.solve_in_place(x);
            }
        }
    }

    pub fn to_dense(&self, dim: usize) -> Matrix<T> {
        let mut out = Matrix::zeros(dim, dim);
        let mut col = vec![T::zero(); dim];
        let mut scratch = vec![T::zero(); dim];
        for c in 0..dim {
            col.iter_mut().for_each(|v| *v = T::zero());
            col[c] = T::one();
            self.apply(&mut col, &mut scratch);
            for r in 0..dim {
                out[(r, c)] = col[r];
            }
        }
        out
    }
}

/// Per-step operators `P_1..P_N` and the products `Pi(a_j, 0)`.
///
/// Shifts by `lambda` are never stored: `Pi_lambda(a, s) = e^{-lambda (a - s)} Pi(a, s)`.
#[derive(Clone, Debug)]
pub struct PropagatorCache<T> {
    stepper: Stepper,
    dim: usize,
    delta: T,
    steps: Vec<StepOperator<T>>,
    origin: Vec<Matrix<T>>,
}

impl<T: Scalar> PropagatorCache<T> {
    pub fn stepper(&self) -> Stepper {
        self.stepper
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_age(&self) -> usize {
        self.steps.len()
    }

    pub fn delta(&self) -> T {
        self.delta
    }

    /// `P_j`, `1 <= j <= n_age`.
    pub fn step(&self, j: usize) -> &StepOperator<T> {
        &self.steps[j - 1]
    }

    /// Applies `P_j` in place.
    #[inline]
    pub fn apply_step(&self, j: usize, x: &mut [T], scratch: &mut [T]) {
        self.steps[j - 1].apply(x, scratch);
    }

    /// `Pi(a_j, 0) = P_j ... P_1`.
    pub fn from_origin(&self, j: usize) -> &Matrix<T> {
        &self.origin[j]
    }
}

pub fn build_propagators<T: Scalar>(s: &Scenario<T>) -> Result<PropagatorCache<T>> {
    build_propagators_with(s, Stepper::ImplicitEuler)
}

pub fn build_propagators_with<T: Scalar>(
    s: &Scenario<T>,
    stepper: Stepper,
) -> Result<PropagatorCache<T>> {
    let grid = s.age_grid();
    let delta = grid.delta();
    let dim = s.dim();
    let mut steps = Vec::with_capacity(grid.n_age());
    for j in 1..=grid.n_age() {
        let a = grid.midpoint(j);
        let age = a.to_f64().unwrap_or(f64::NAN);
        let step = match (s.generator_operator(a)?, stepper) {
            (Generator::Dense(g), Stepper::ImplicitEuler) => {
                let mut m = Matrix::identity(dim);
                m.add_scaled(-delta, &g);
                let p = m.inverse().ok_or(Error::SingularStep { age })?;
                StepOperator::Dense(clean_positive(p, age)?)
            }
            (Generator::Dense(g), Stepper::CrankNicolson) => {
                let half = delta * T::lit(0.5);
                let mut lhs = Matrix::identity(dim);
                lhs.add_scaled(-half, &g);
                let mut rhs = Matrix::identity(dim);
                rhs.add_scaled(half, &g);
                let inv = lhs.inverse().ok_or(Error::SingularStep { age })?;
                StepOperator::Dense(inv.matmul(&rhs))
            }
            (Generator::Tridiagonal(g), Stepper::ImplicitEuler) => {
                let lhs = g.shifted_identity(-delta);
                if !lhs.is_m_matrix() {
                    let worst = lhs
                        .lower
                        .iter()
                        .chain(&lhs.upper)
                        .copied()
                        .fold(T::zero(), T::max);
                    return Err(Error::NonPositiveStep {
                        age,
                        value: -worst.to_f64().unwrap_or(f64::NAN),
                    });
                }
                StepOperator::Tridiagonal {
                    implicit: lhs.factor().ok_or(Error::SingularStep { age })?,
                    explicit: None,
                }
            }
            (Generator::Tridiagonal(g), Stepper::CrankNicolson) => {
                let half = delta * T::lit(0.5);
                StepOperator::Tridiagonal {
                    implicit: g
                        .shifted_identity(-half)
                        .factor()
                        .ok_or(Error::SingularStep { age })?,
                    explicit: Some(g.shifted_identity(half)),
                }
            }
        };
        steps.push(step);
    }

    let mut origin = Vec::with_capacity(grid.n_nodes());
    origin.push(Matrix::identity(dim));
    let mut cols: Vec<Vec<T>> = (0..dim)
        .map(|c| {
            let mut e = vec![T::zero(); dim];
            e[c] = T::one();
            e
        })
        .collect();
    let mut scratch = vec![T::zero(); dim];
    for step in &steps {
        for col in cols.iter_mut() {
            step.apply(col, &mut scratch);
        }
        origin.push(Matrix::from_fn(dim, dim, |r, c| cols[c][r]));
    }

    Ok(PropagatorCache {
        stepper,
        dim,
        delta,
        steps,
        origin,
    })
}

/// Rejects genuinely negative entries of an implicit Euler step and flushes
/// roundoff-level ones to zero.
fn clean_positive<T: Scalar>(mut p: Matrix<T>, age: f64) -> Result<Matrix<T>> {
    let floor = -T::epsilon() * T::lit(64.0) * p.max_abs();
    let min = p.min_entry();
    if min < floor {
        return Err(Error::NonPositiveStep {
            age,
            value: min.to_f64().unwrap_or(f64::NAN),
        });
    }
    if min < T::zero() {
        p = Matrix::from_fn(p.rows(), p.cols(), |i, j| p[(i, j)].max(T::zero()));
    }
    Ok(p)
}

/// `e^{-lambda (a_j - a_i)} P_j ... P_{i+1} x`.
pub fn propagate<T: Scalar>(
    cache: &PropagatorCache<T>,
    i: usize,
    j: usize,
    x: &[T],
    lambda: T,
) -> Result<StateVector<T>> {
    if i > j || j > cache.n_age() {
        return Err(Error::IndexOrder {
            from: i,
            to: j,
            n_age: cache.n_age(),
        });
    }
    check_dim(cache, x.len())?;
    let mut out = x.to_vec();
    if i == j {
        return Ok(out.into());
    }
    let mut scratch = vec![T::zero(); cache.dim];
    for k in i + 1..=j {
        cache.apply_step(k, &mut out, &mut scratch);
    }
    if lambda != T::zero() {
        let f = (-lambda * T::from_count(j - i) * cache.delta).exp();
        out.iter_mut().for_each(|v| *v *= f);
    }
    Ok(out.into())
}

fn check_dim<T: Scalar>(cache: &PropagatorCache<T>, len: usize) -> Result<()> {
    if len != cache.dim {
        return Err(Error::GridMismatch(format!(
            "state vector has {len} components, expected {}",
            cache.dim
        )));
    }
    Ok(())
}

/// Mild solution sampled on the age grid, with the data it came from.
#[derive(Clone, Debug)]
pub struct MildSolution<T> {
    pub values: AgeDensity<T>,
    pub initial: StateVector<T>,
    pub lambda: T,
}

/// `v_0 = x`, `v_j = e^{-lambda delta} P_j (v_{j-1} + delta phi_{j-1})`.
///
/// Equivalently `v(a_j) = Pi_lambda(a_j, 0) x + sum_{i<j} delta Pi_lambda(a_j, a_i) phi(a_i)`.
pub fn mild_solve<T: Scalar>(
    s: &Scenario<T>,
    cache: &PropagatorCache<T>,
    lambda: T,
    x: &[T],
    phi: &AgeDensity<T>,
) -> Result<MildSolution<T>> {
    s.check_density(phi)?;
    check_dim(cache, x.len())?;
    let values = mild_values(cache, lambda, x, phi);
    Ok(MildSolution {
        values,
        initial: x.to_vec().into(),
        lambda,
    })
}

pub(crate) fn mild_values<T: Scalar>(
    cache: &PropagatorCache<T>,
    lambda: T,
    x: &[T],
    phi: &AgeDensity<T>,
) -> AgeDensity<T> {
    let dim = cache.dim;
    let delta = cache.delta;
    let decay = (-lambda * delta).exp();
    let mut out = AgeDensity::zeros(phi.n_nodes(), dim);
    out.node_mut(0).copy_from_slice(x);
    let mut v = x.to_vec();
    let mut scratch = vec![T::zero(); dim];
    for j in 1..phi.n_nodes() {
        for (vi, &p) in v.iter_mut().zip(phi.node(j - 1)) {
            *vi += delta * p;
        }
        cache.apply_step(j, &mut v, &mut scratch);
        if decay != T::one() {
            v.iter_mut().for_each(|e| *e *= decay);
        }
        out.node_mut(j).copy_from_slice(&v);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use proptest::prelude::*;

    #[test]
    fn zero_generator_gives_identity_steps() {
        let s = presets::scalar::<f64>(1.0, 0.0, 1.0, 200).unwrap();
        let c = build_propagators(&s).unwrap();
        for j in 1..=200 {
            assert_eq!(c.step(j).to_dense(1)[(0, 0)], 1.0);
        }
    }

    #[test]
    fn scalar_decay_step() {
        let s = presets::scalar::<f64>(1.0, 1.0, 1.0, 100).unwrap();
        let c = build_propagators(&s).unwrap();
        let p = c.step(5).to_dense(1)[(0, 0)];
        assert!((p - 1.0 / 1.01).abs() < 1e-15);
    }

    #[test]
    fn conservative_diffusion_step_has_unit_column_sums() {
        let s = presets::uniform_diffusion::<f64>(0.1, 0.0, 1.0, 32, 1.0, 200).unwrap();
        let c = build_propagators(&s).unwrap();
        let p = c.step(17).to_dense(32);
        for col in 0..32 {
            let sum: f64 = (0..32).map(|r| p[(r, col)]).sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!((0..32).all(|r| p[(r, col)] >= 0.0));
        }
    }

    #[test]
    fn propagate_identity_and_shift() {
        let s = presets::scalar::<f64>(1.0, 0.0, 1.0, 200).unwrap();
        let c = build_propagators(&s).unwrap();
        assert_eq!(propagate(&c, 7, 7, &[3.5], 2.0).unwrap()[0], 3.5);
        let v = propagate(&c, 0, 200, &[1.0], 1.0).unwrap()[0];
        assert!((v - (-1.0f64).exp()).abs() < 1e-12);
        assert!(matches!(
            propagate(&c, 5, 3, &[1.0], 0.0),
            Err(Error::IndexOrder { .. })
        ));
        assert!(propagate(&c, 0, 201, &[1.0], 0.0).is_err());
    }

    #[test]
    fn uniform_data_is_inert_under_diffusion() {
        let s = presets::uniform_diffusion::<f64>(0.1, 0.0, 1.0, 32, 1.0, 200).unwrap();
        let c = build_propagators(&s).unwrap();
        let v = propagate(&c, 13, 170, &[1.0; 32], 0.0).unwrap();
        assert!(v.iter().all(|x| (x - 1.0).abs() < 1e-12));
    }

    #[test]
    fn origin_products_match_steps() {
        let s = presets::uniform_diffusion::<f64>(0.1, 0.3, 1.0, 8, 1.0, 40).unwrap();
        let c = build_propagators(&s).unwrap();
        let x: Vec<f64> = (0..8).map(|i| 1.0 + i as f64).collect();
        for j in [0, 1, 17, 40] {
            let a = propagate(&c, 0, j, &x, 0.0).unwrap();
            let b = c.from_origin(j).mul_vec(&x);
            for (p, q) in a.iter().zip(&b) {
                assert!((p - q).abs() <= 1e-12 * p.abs());
            }
        }
    }

    #[test]
    fn first_order_convergence_for_scalar_decay() {
        let err = |n: usize| {
            let s = presets::scalar::<f64>(1.0, 1.0, 1.0, n).unwrap();
            let c = build_propagators(&s).unwrap();
            (propagate(&c, 0, n, &[1.0], 0.0).unwrap()[0] - (-1.0f64).exp()).abs()
        };
        let ratio = err(100) / err(200);
        assert!((1.7..=2.3).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn crank_nicolson_is_second_order() {
        let err = |n: usize| {
            let s = presets::scalar::<f64>(1.0, 1.0, 1.0, n).unwrap();
            let c = build_propagators_with(&s, Stepper::CrankNicolson).unwrap();
            (propagate(&c, 0, n, &[1.0], 0.0).unwrap()[0] - (-1.0f64).exp()).abs()
        };
        let ratio = err(50) / err(100);
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn mild_solution_examples() {
        let s = presets::scalar::<f64>(1.0, 0.0, 1.0, 200).unwrap();
        let c = build_propagators(&s).unwrap();
        let ones = s.density_from_fn(|_, _| 1.0);

        let zero = mild_solve(&s, &c, 0.0, &[0.0], &s.zero_density()).unwrap();
        assert_eq!(zero.values.max_abs(), 0.0);

        let m = mild_solve(&s, &c, 1.0, &[1.0], &ones).unwrap();
        assert_eq!(m.values.node(0), &[1.0]);
        assert!((m.values.node(200)[0] - 1.0).abs() < 5e-3);

        let q = mild_solve(&s, &c, 0.0, &[0.0], &ones).unwrap();
        for j in 0..=200 {
            let a = j as f64 / 200.0;
            assert!((q.values.node(j)[0] - a).abs() < 1e-12);
        }
    }

    #[test]
    fn mild_solve_rejects_wrong_grid() {
        let s = presets::scalar::<f64>(1.0, 0.0, 1.0, 20).unwrap();
        let c = build_propagators(&s).unwrap();
        let phi = AgeDensity::<f64>::zeros(10, 1);
        assert!(matches!(
            mild_solve(&s, &c, 0.0, &[0.0], &phi),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn non_monotone_matrix_step_is_rejected() {
        use crate::linalg::Matrix;
        use crate::model::{build_scenario, AgeGrid, Coefficients, ScenarioConfig};
        let a = Matrix::from_rows(&[vec![-1.0, -50.0], vec![0.0, -1.0]]);
        let s = build_scenario(ScenarioConfig {
            age: AgeGrid::new(1.0, 10).unwrap(),
            coefficients: Coefficients::constant_matrix(a, Matrix::identity(2)),
            infinite_age: false,
            holder_rho: None,
        })
        .unwrap();
        assert!(matches!(
            build_propagators(&s),
            Err(Error::NonPositiveStep { .. })
        ));
        assert!(build_propagators_with(&s, Stepper::CrankNicolson).is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn cocycle_and_positivity(
            i in 0usize..=30,
            dk in 0usize..=30,
            dj in 0usize..=30,
            x in prop::collection::vec(0.0f64..10.0, 6),
            lambda in -2.0f64..2.0,
        ) {
            let s = presets::uniform_diffusion::<f64>(0.05, 0.4, 1.0, 6, 1.0, 90).unwrap();
            let c = build_propagators(&s).unwrap();
            let k = i + dk;
            let j = k + dj;
            let direct = propagate(&c, i, j, &x, lambda).unwrap();
            let mid = propagate(&c, i, k, &x, lambda).unwrap();
            let composed = propagate(&c, k, j, &mid, lambda).unwrap();
            let unshifted = propagate(&c, i, j, &x, 0.0).unwrap();
            let f = (-lambda * (j - i) as f64 / 90.0).exp();
            for ((d, p), u) in direct.iter().zip(composed.iter()).zip(unshifted.iter()) {
                prop_assert!((d - p).abs() <= 1e-12 * d.abs().max(1e-300) + 1e-300);
                prop_assert!((d - f * u).abs() <= 1e-12 * d.abs() + 1e-300);
                prop_assert!(*d >= 0.0);
            }
        }
    }
}
