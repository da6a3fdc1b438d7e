//! Problem instances: grids, coefficient families and the generator `A(a)`.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{norm_l1, Matrix, Operator, Tridiagonal};
use crate::state::AgeDensity;
use crate::Scalar;

/// Uniform age grid `a_j = j * delta`, `j = 0..=n_age`, on `[0, a_max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AgeGrid<T> {
    a_max: T,
    n_age: usize,
    delta: T,
}

impl<T: Scalar> AgeGrid<T> {
    pub fn new(a_max: T, n_age: usize) -> Result<Self> {
        if !(a_max > T::zero()) || !a_max.is_finite() {
            return Err(Error::InvalidGrid(format!(
                "a_max must be positive, got {a_max}"
            )));
        }
        if n_age < 2 {
            return Err(Error::InvalidGrid(format!(
                "n_age must be at least 2, got {n_age}"
            )));
        }
        Ok(Self {
            a_max,
            n_age,
            delta: a_max / T::from_count(n_age),
        })
    }

    /// Grid with prescribed step; `a_max` must be an integer multiple of it
    /// and is reset to exactly `n_age * delta`.
    pub fn from_step(delta: T, a_max: T) -> Result<Self> {
        if !(delta > T::zero()) || !delta.is_finite() {
            return Err(Error::InvalidGrid(format!(
                "age step must be positive, got {delta}"
            )));
        }
        let ratio = a_max / delta;
        let n = ratio.round();
        if (ratio - n).abs() > T::lit(1e-9) * ratio.max(T::one()) {
            return Err(Error::InvalidGrid(format!(
                "a_max = {a_max} is not a multiple of delta = {delta}"
            )));
        }
        let n_age = n.to_usize().unwrap_or(0);
        if n_age < 2 {
            return Err(Error::InvalidGrid(format!(
                "n_age must be at least 2, got {n_age}"
            )));
        }
        Ok(Self {
            a_max: T::from_count(n_age) * delta,
            n_age,
            delta,
        })
    }

    #[inline]
    pub fn a_max(&self) -> T {
        self.a_max
    }

    #[inline]
    pub fn n_age(&self) -> usize {
        self.n_age
    }

    #[inline]
    pub fn delta(&self) -> T {
        self.delta
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.n_age + 1
    }

    #[inline]
    pub fn node(&self, j: usize) -> T {
        T::from_count(j) * self.delta
    }

    /// Midpoint of the cell `[a_{j-1}, a_j]`, `j >= 1`.
    #[inline]
    pub fn midpoint(&self, j: usize) -> T {
        (T::from_count(j) - T::lit(0.5)) * self.delta
    }

    /// Trapezoid weight of node `j` in age integrals against the birth
    /// kernel.
    #[inline]
    pub fn birth_weight(&self, j: usize) -> T {
        if j == 0 || j == self.n_age {
            self.delta * T::lit(0.5)
        } else {
            self.delta
        }
    }

    /// Number of age steps in `t`; fails unless `t` is a nonnegative
    /// multiple of `delta`.
    pub fn steps_in(&self, t: T) -> Result<usize> {
        let ratio = t / self.delta;
        let k = ratio.round();
        if !t.is_finite()
            || t < T::zero()
            || (ratio - k).abs() > T::lit(1e-9) * ratio.abs().max(T::one())
        {
            return Err(Error::TimeNotAligned {
                time: t.to_f64().unwrap_or(f64::NAN),
                step: self.delta.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(k.to_usize().unwrap_or(0))
    }
}

/// Uniform cell grid on `[x_min, x_max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SpaceGrid<T> {
    x_min: T,
    x_max: T,
    n_cells: usize,
}

impl<T: Scalar> SpaceGrid<T> {
    pub fn new(x_min: T, x_max: T, n_cells: usize) -> Result<Self> {
        if n_cells == 0 {
            return Err(Error::InvalidGrid("n_cells must be at least 1".into()));
        }
        if !(x_max > x_min) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(Error::InvalidGrid(format!(
                "space interval [{x_min}, {x_max}] is empty"
            )));
        }
        Ok(Self {
            x_min,
            x_max,
            n_cells,
        })
    }

    pub fn x_min(&self) -> T {
        self.x_min
    }

    pub fn x_max(&self) -> T {
        self.x_max
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    /// Cell width `h`.
    pub fn width(&self) -> T {
        (self.x_max - self.x_min) / T::from_count(self.n_cells)
    }

    pub fn center(&self, i: usize) -> T {
        self.x_min + (T::from_count(i) + T::lit(0.5)) * self.width()
    }
}

/// Scalar coefficient `(age, position) -> value`.
pub type ScalarField<T> = Arc<dyn Fn(T, T) -> T + Send + Sync>;

/// Matrix-valued coefficient `age -> matrix`.
pub type MatrixField<T> = Arc<dyn Fn(T) -> Matrix<T> + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Matrix,
    Diffusion1d,
}

/// Coefficient data for one of the two state-space backends.
#[derive(Clone)]
pub enum Coefficients<T> {
    /// `E_0 = R^dim`; `A(a)` and `b(a)` are supplied directly.
    Matrix {
        dim: usize,
        generator: MatrixField<T>,
        birth: MatrixField<T>,
    },
    /// `A(a) = div(d(a,.) grad) - m(a,.)` on an interval with zero-flux
    /// ends; `b(a,.)` acts by multiplication.
    Diffusion {
        space: SpaceGrid<T>,
        diffusivity: ScalarField<T>,
        mortality: ScalarField<T>,
        birth: ScalarField<T>,
    },
}

impl<T: Scalar> Coefficients<T> {
    /// Age-independent matrix coefficients.
    pub fn constant_matrix(generator: Matrix<T>, birth: Matrix<T>) -> Self {
        let dim = generator.rows();
        Coefficients::Matrix {
            dim,
            generator: Arc::new(move |_| generator.clone()),
            birth: Arc::new(move |_| birth.clone()),
        }
    }

    pub fn backend(&self) -> Backend {
        match self {
            Coefficients::Matrix { .. } => Backend::Matrix,
            Coefficients::Diffusion { .. } => Backend::Diffusion1d,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Coefficients::Matrix { dim, .. } => *dim,
            Coefficients::Diffusion { space, .. } => space.n_cells(),
        }
    }
}

impl<T: fmt::Debug> fmt::Debug for Coefficients<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coefficients::Matrix { dim, .. } => f.debug_struct("Matrix").field("dim", dim).finish(),
            Coefficients::Diffusion { space, .. } => {
                f.debug_struct("Diffusion").field("space", space).finish()
            }
        }
    }
}

/// Everything needed to build a [`Scenario`].
#[derive(Clone, Debug)]
pub struct ScenarioConfig<T> {
    pub age: AgeGrid<T>,
    pub coefficients: Coefficients<T>,
    /// The modelled maximal age is infinite and `age.a_max` is a truncation.
    pub infinite_age: bool,
    /// Declared Hölder exponent of `a -> A(a)`; metadata only.
    pub holder_rho: Option<T>,
}

/// Generator `A(a)` in the representation its backend produces.
#[derive(Clone, Debug, PartialEq)]
pub enum Generator<T> {
    Dense(Matrix<T>),
    Tridiagonal(Tridiagonal<T>),
}

impl<T: Scalar> Generator<T> {
    pub fn to_dense(&self) -> Matrix<T> {
        match self {
            Generator::Dense(m) => m.clone(),
            Generator::Tridiagonal(t) => t.to_dense(),
        }
    }

    pub fn log_norm_l1(&self) -> T {
        match self {
            Generator::Dense(m) => m.log_norm_l1(),
            Generator::Tridiagonal(t) => t.log_norm_l1(),
        }
    }
}

/// A validated problem instance.
#[derive(Clone, Debug)]
pub struct Scenario<T> {
    age: AgeGrid<T>,
    coefficients: Coefficients<T>,
    infinite_age: bool,
    holder_rho: Option<T>,
    dim: usize,
    component_weight: T,
    birth: Vec<Operator<T>>,
    birth_norm: T,
    growth_bound: T,
}

/// Validates the configuration and samples the birth kernel and the
/// generator on the age nodes.
pub fn build_scenario<T: Scalar>(config: ScenarioConfig<T>) -> Result<Scenario<T>> {
    let ScenarioConfig {
        age,
        coefficients,
        infinite_age,
        holder_rho,
    } = config;
    let dim = coefficients.dim();
    if dim == 0 {
        return Err(Error::InvalidGrid(
            "state dimension must be at least 1".into(),
        ));
    }
    let component_weight = match &coefficients {
        Coefficients::Matrix { .. } => T::one(),
        Coefficients::Diffusion { space, .. } => space.width(),
    };

    let mut birth = Vec::with_capacity(age.n_nodes());
    for j in 0..age.n_nodes() {
        birth.push(sample_birth(&coefficients, age.node(j))?);
    }
    if birth.iter().all(Operator::is_zero) {
        return Err(Error::TrivialBirth);
    }
    let birth_norm = birth.iter().map(Operator::norm_l1).fold(T::zero(), T::max);

    let mut growth_bound = T::neg_infinity();
    for j in 0..age.n_nodes() {
        let g = generator_at(&coefficients, age.node(j))?;
        growth_bound = growth_bound.max(g.log_norm_l1());
    }
    // Midpoints are where the propagators freeze the coefficients; validate
    // them here so that bad data fails at construction time.
    for j in 1..age.n_nodes() {
        generator_at(&coefficients, age.midpoint(j))?;
    }

    if infinite_age {
        if growth_bound >= T::zero() {
            return Err(Error::NonDecayingTail {
                growth_bound: growth_bound.to_f64().unwrap_or(f64::NAN),
            });
        }
        log::warn!(
            "infinite maximal age truncated at a_max = {}: tail bound exp(growth_bound * a_max) = {:e}",
            age.a_max(),
            (growth_bound * age.a_max()).exp()
        );
    }

    Ok(Scenario {
        age,
        coefficients,
        infinite_age,
        holder_rho,
        dim,
        component_weight,
        birth,
        birth_norm,
        growth_bound,
    })
}

fn to_f64<T: Scalar>(v: T) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

fn sample_birth<T: Scalar>(c: &Coefficients<T>, a: T) -> Result<Operator<T>> {
    match c {
        Coefficients::Matrix { dim, birth, .. } => {
            let b = birth(a);
            if (b.rows(), b.cols()) != (*dim, *dim) {
                return Err(Error::ShapeMismatch {
                    name: "b",
                    got: (b.rows(), b.cols()),
                    expected: (*dim, *dim),
                });
            }
            if !b.is_finite() {
                return Err(Error::NonFiniteCoefficient {
                    name: "b",
                    age: to_f64(a),
                });
            }
            let min = b.min_entry();
            if min < T::zero() {
                return Err(Error::NegativeBirth {
                    age: to_f64(a),
                    value: to_f64(min),
                });
            }
            Ok(Operator::Dense(b))
        }
        Coefficients::Diffusion { space, birth, .. } => {
            let mut diag = Vec::with_capacity(space.n_cells());
            for i in 0..space.n_cells() {
                let v = birth(a, space.center(i));
                if !v.is_finite() {
                    return Err(Error::NonFiniteCoefficient {
                        name: "b",
                        age: to_f64(a),
                    });
                }
                if v < T::zero() {
                    return Err(Error::NegativeBirth {
                        age: to_f64(a),
                        value: to_f64(v),
                    });
                }
                diag.push(v);
            }
            Ok(Operator::Diagonal(diag))
        }
    }
}

fn generator_at<T: Scalar>(c: &Coefficients<T>, a: T) -> Result<Generator<T>> {
    match c {
        Coefficients::Matrix { dim, generator, .. } => {
            let m = generator(a);
            if (m.rows(), m.cols()) != (*dim, *dim) {
                return Err(Error::ShapeMismatch {
                    name: "A",
                    got: (m.rows(), m.cols()),
                    expected: (*dim, *dim),
                });
            }
            if !m.is_finite() {
                return Err(Error::NonFiniteCoefficient {
                    name: "A",
                    age: to_f64(a),
                });
            }
            Ok(Generator::Dense(m))
        }
        Coefficients::Diffusion {
            space,
            diffusivity,
            mortality,
            ..
        } => {
            let n = space.n_cells();
            let h = space.width();
            let mut d = Vec::with_capacity(n);
            let mut m = Vec::with_capacity(n);
            for i in 0..n {
                let x = space.center(i);
                let di = diffusivity(a, x);
                if !di.is_finite() {
                    return Err(Error::NonFiniteCoefficient {
                        name: "d",
                        age: to_f64(a),
                    });
                }
                if !(di > T::zero()) {
                    return Err(Error::NonPositiveDiffusivity {
                        age: to_f64(a),
                        position: to_f64(x),
                        value: to_f64(di),
                    });
                }
                let mi = mortality(a, x);
                if !mi.is_finite() {
                    return Err(Error::NonFiniteCoefficient {
                        name: "m",
                        age: to_f64(a),
                    });
                }
                if mi < T::zero() {
                    return Err(Error::NegativeMortality {
                        age: to_f64(a),
                        position: to_f64(x),
                        value: to_f64(mi),
                    });
                }
                d.push(di);
                m.push(mi);
            }
            // Harmonic-mean face diffusivities; boundary faces carry no flux.
            let h2 = h * h;
            let face: Vec<T> = d
                .windows(2)
                .map(|w| T::lit(2.0) * w[0] * w[1] / (w[0] + w[1]) / h2)
                .collect();
            let mut diag = Vec::with_capacity(n);
            for i in 0..n {
                let left = if i > 0 { face[i - 1] } else { T::zero() };
                let right = if i + 1 < n { face[i] } else { T::zero() };
                diag.push(-left - right - m[i]);
            }
            Ok(Generator::Tridiagonal(Tridiagonal {
                lower: face.clone(),
                diag,
                upper: face,
            }))
        }
    }
}

impl<T: Scalar> Scenario<T> {
    pub fn age_grid(&self) -> &AgeGrid<T> {
        &self.age
    }

    pub fn coefficients(&self) -> &Coefficients<T> {
        &self.coefficients
    }

    pub fn backend(&self) -> Backend {
        self.coefficients.backend()
    }

    pub fn space_grid(&self) -> Option<&SpaceGrid<T>> {
        match &self.coefficients {
            Coefficients::Diffusion { space, .. } => Some(space),
            Coefficients::Matrix { .. } => None,
        }
    }

    pub fn infinite_age(&self) -> bool {
        self.infinite_age
    }

    pub fn holder_rho(&self) -> Option<T> {
        self.holder_rho
    }

    /// Dimension of the state space.
    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn n_age(&self) -> usize {
        self.age.n_age()
    }

    #[inline]
    pub fn delta(&self) -> T {
        self.age.delta()
    }

    /// Birth operator `b(a_j)`.
    #[inline]
    pub fn birth(&self, j: usize) -> &Operator<T> {
        &self.birth[j]
    }

    /// `max_j ||b(a_j)||` in the induced L1 norm.
    pub fn birth_norm(&self) -> T {
        self.birth_norm
    }

    /// Growth bound estimate, see [`estimate_growth_bound`].
    pub fn growth_bound(&self) -> T {
        self.growth_bound
    }

    /// `growth_bound + ||b||`: exponential rate bounding the semigroup with
    /// constant 1.
    pub fn omega_star(&self) -> T {
        self.growth_bound + self.birth_norm
    }

    /// Weight of each component in the state norm (cell width for the
    /// diffusion backend).
    pub fn component_weight(&self) -> T {
        self.component_weight
    }

    /// Weighted L1 norm on the state space.
    pub fn state_norm(&self, x: &[T]) -> T {
        self.component_weight * norm_l1(x)
    }

    /// Duality pairing `<f, x>` matching [`Scenario::state_norm`].
    pub fn pairing(&self, f: &[T], x: &[T]) -> T {
        self.component_weight * crate::linalg::dot(f, x)
    }

    /// L1-in-age norm, one cell `[a_j, a_{j+1})` per node `j < n_age`.
    pub fn norm(&self, u: &AgeDensity<T>) -> T {
        let delta = self.delta();
        (0..self.n_age())
            .map(|j| delta * self.state_norm(u.node(j)))
            .sum()
    }

    /// `sum_j w_j b(a_j) u(a_j)` with trapezoid weights.
    pub fn birth_integral(&self, u: &AgeDensity<T>) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim];
        for j in 0..self.age.n_nodes() {
            self.birth[j].apply_acc(self.age.birth_weight(j), u.node(j), &mut out);
        }
        out
    }

    /// Zero density on this scenario's grid.
    pub fn zero_density(&self) -> AgeDensity<T> {
        AgeDensity::zeros(self.age.n_nodes(), self.dim)
    }

    /// Samples `f(age, component)` on the grid.
    pub fn density_from_fn(&self, mut f: impl FnMut(T, usize) -> T) -> AgeDensity<T> {
        AgeDensity::from_fn(self.age.n_nodes(), self.dim, |j, i| f(self.age.node(j), i))
    }

    pub fn check_density(&self, u: &AgeDensity<T>) -> Result<()> {
        if u.n_nodes() != self.age.n_nodes() || u.dim() != self.dim {
            return Err(Error::GridMismatch(format!(
                "density has {}x{} entries, scenario expects {}x{}",
                u.n_nodes(),
                u.dim(),
                self.age.n_nodes(),
                self.dim
            )));
        }
        Ok(())
    }

    pub(crate) fn generator_operator(&self, a: T) -> Result<Generator<T>> {
        self.check_age(a)?;
        generator_at(&self.coefficients, a)
    }

    fn check_age(&self, a: T) -> Result<()> {
        let slack = self.delta() * T::lit(1e-9);
        if !(a >= -slack && a <= self.age.a_max() + slack) {
            return Err(Error::AgeOutOfRange {
                age: to_f64(a),
                a_max: to_f64(self.age.a_max()),
            });
        }
        Ok(())
    }
}

/// Generator `A(a)` as a dense matrix.
///
/// The diffusion backend yields the finite-volume operator with
/// harmonic-mean face diffusivities and zero-flux ends, minus `diag(m)`.
pub fn assemble_generator<T: Scalar>(s: &Scenario<T>, a: T) -> Result<Matrix<T>> {
    Ok(s.generator_operator(a)?.to_dense())
}

/// Max over age nodes of the L1 logarithmic norm of `A(a_j)`.
pub fn estimate_growth_bound<T: Scalar>(s: &Scenario<T>) -> T {
    s.growth_bound
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn diffusion_config(n_cells: usize, d: f64, m: f64) -> ScenarioConfig<f64> {
        ScenarioConfig {
            age: AgeGrid::new(1.0, 10).unwrap(),
            coefficients: Coefficients::Diffusion {
                space: SpaceGrid::new(0.0, 1.0, n_cells).unwrap(),
                diffusivity: Arc::new(move |_, _| d),
                mortality: Arc::new(move |_, _| m),
                birth: Arc::new(|_, _| 1.0),
            },
            infinite_age: false,
            holder_rho: None,
        }
    }

    #[test]
    fn age_grid_rejects_bad_input() {
        assert!(AgeGrid::new(0.0, 10).is_err());
        assert!(AgeGrid::new(1.0, 1).is_err());
        assert!(AgeGrid::from_step(0.3, 1.0).is_err());
        let g = AgeGrid::from_step(0.25, 1.0).unwrap();
        assert_eq!(g.n_age(), 4);
        assert_eq!(g.a_max(), 1.0);
    }

    #[test]
    fn time_alignment() {
        let g = AgeGrid::new(1.0, 200).unwrap();
        assert_eq!(g.steps_in(2.0).unwrap(), 400);
        assert_eq!(g.steps_in(0.0).unwrap(), 0);
        assert!(matches!(
            g.steps_in(0.0025),
            Err(Error::TimeNotAligned { .. })
        ));
        assert!(g.steps_in(-1.0).is_err());
    }

    #[test]
    fn birth_weights_integrate_constants_exactly() {
        let g = AgeGrid::new(1.0, 7).unwrap();
        let total: f64 = (0..g.n_nodes()).map(|j| g.birth_weight(j)).sum();
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn scalar_generator_is_zero() {
        let s = presets::scalar::<f64>(1.0, 0.0, 1.0, 200).unwrap();
        let a = assemble_generator(&s, 0.3).unwrap();
        assert_eq!(a, Matrix::zeros(1, 1));
        assert_eq!(estimate_growth_bound(&s), 0.0);
    }

    #[test]
    fn scalar_mortality_growth_bound() {
        let s = presets::scalar::<f64>(1.0, 1.0, 1.0, 200).unwrap();
        assert_eq!(estimate_growth_bound(&s), -1.0);
    }

    #[test]
    fn two_cell_flux_stencil() {
        // d / h^2 = 0.1 / 0.25 = 0.4
        let s = build_scenario(diffusion_config(2, 0.1, 0.0)).unwrap();
        let a = assemble_generator(&s, 0.5).unwrap();
        let expected = Matrix::from_rows(&[vec![-0.4, 0.4], vec![0.4, -0.4]]);
        for i in 0..2 {
            for j in 0..2 {
                assert!((a[(i, j)] - expected[(i, j)]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn diffusion_rows_sum_to_minus_mortality() {
        let cfg = ScenarioConfig {
            coefficients: Coefficients::Diffusion {
                space: SpaceGrid::new(0.0, 2.0, 9).unwrap(),
                diffusivity: Arc::new(|a, x| 0.1 + a * x),
                mortality: Arc::new(|a: f64, x: f64| (a + x).sin().abs()),
                birth: Arc::new(|_, _| 1.0),
            },
            ..diffusion_config(9, 0.1, 0.0)
        };
        let s = build_scenario(cfg).unwrap();
        for &a in &[0.0, 0.35, 1.0] {
            let g = assemble_generator(&s, a).unwrap();
            let ones = vec![1.0; 9];
            let row = g.mul_vec(&ones);
            let space = s.space_grid().unwrap();
            for (i, r) in row.iter().enumerate() {
                let m = (a + space.center(i)).sin().abs();
                assert!((r + m).abs() < 1e-12, "row {i}: {r} vs -{m}");
            }
        }
    }

    #[test]
    fn uniform_diffusion_has_zero_growth_bound() {
        let s = presets::uniform_diffusion::<f64>(0.1, 0.0, 1.0, 32, 1.0, 200).unwrap();
        let g = assemble_generator(&s, 0.5).unwrap();
        let ones = vec![1.0; 32];
        assert!(g.mul_vec(&ones).iter().all(|v| v.abs() < 1e-12));
        assert!(estimate_growth_bound(&s).abs() < 1e-12);
    }

    #[test]
    fn generator_is_deterministic() {
        let s = presets::uniform_diffusion::<f64>(0.1, 0.2, 1.0, 16, 1.0, 50).unwrap();
        let a = assemble_generator(&s, 0.41).unwrap();
        let b = assemble_generator(&s, 0.41).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn age_out_of_range() {
        let s = presets::scalar::<f64>(1.0, 0.0, 1.0, 10).unwrap();
        assert!(matches!(
            assemble_generator(&s, 1.5),
            Err(Error::AgeOutOfRange { .. })
        ));
    }

    #[test]
    fn construction_errors() {
        let neg_d = diffusion_config(4, -0.1, 0.0);
        assert!(matches!(
            build_scenario(neg_d),
            Err(Error::NonPositiveDiffusivity { .. })
        ));

        let zero_b = ScenarioConfig {
            age: AgeGrid::new(1.0, 10).unwrap(),
            coefficients: Coefficients::constant_matrix(Matrix::scalar(0.0), Matrix::scalar(0.0)),
            infinite_age: false,
            holder_rho: None,
        };
        assert!(matches!(build_scenario(zero_b), Err(Error::TrivialBirth)));

        let neg_b = ScenarioConfig {
            age: AgeGrid::new(1.0, 10).unwrap(),
            coefficients: Coefficients::constant_matrix(
                Matrix::zeros(2, 2),
                Matrix::from_rows(&[vec![1.0, -0.5], vec![0.0, 1.0]]),
            ),
            infinite_age: false,
            holder_rho: None,
        };
        assert!(matches!(
            build_scenario(neg_b),
            Err(Error::NegativeBirth { .. })
        ));

        let tail = ScenarioConfig {
            age: AgeGrid::new(1.0, 10).unwrap(),
            coefficients: Coefficients::constant_matrix(Matrix::scalar(0.0), Matrix::scalar(1.0)),
            infinite_age: true,
            holder_rho: None,
        };
        assert!(matches!(
            build_scenario(tail),
            Err(Error::NonDecayingTail { .. })
        ));

        let decaying = ScenarioConfig {
            age: AgeGrid::new(20.0, 400).unwrap(),
            coefficients: Coefficients::constant_matrix(Matrix::scalar(-1.0), Matrix::scalar(1.5)),
            infinite_age: true,
            holder_rho: Some(0.5),
        };
        let s = build_scenario(decaying).unwrap();
        assert!(s.infinite_age());
        assert_eq!(s.holder_rho(), Some(0.5));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let cfg = ScenarioConfig {
            age: AgeGrid::new(1.0, 10).unwrap(),
            coefficients: Coefficients::Matrix {
                dim: 2,
                generator: Arc::new(|_| Matrix::zeros(2, 2)),
                birth: Arc::new(|_| Matrix::identity(3)),
            },
            infinite_age: false,
            holder_rho: None,
        };
        assert!(matches!(
            build_scenario(cfg),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
