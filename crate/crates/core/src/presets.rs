//! Ready-made constant-coefficient scenarios.

use std::sync::Arc;

use crate::error::Result;
use crate::linalg::Matrix;
use crate::model::{build_scenario, AgeGrid, Coefficients, Scenario, ScenarioConfig, SpaceGrid};
use crate::Scalar;

/// One-dimensional state space with constant birth rate and mortality.
pub fn scalar<T: Scalar>(birth: T, mortality: T, a_max: T, n_age: usize) -> Result<Scenario<T>> {
    build_scenario(ScenarioConfig {
        age: AgeGrid::new(a_max, n_age)?,
        coefficients: Coefficients::constant_matrix(
            Matrix::scalar(-mortality),
            Matrix::scalar(birth),
        ),
        infinite_age: false,
        holder_rho: None,
    })
}

/// Constant diffusivity, mortality and birth rate on `[0, 1]` with zero-flux ends.
pub fn uniform_diffusion<T: Scalar>(
    diffusivity: T,
    mortality: T,
    birth: T,
    n_cells: usize,
    a_max: T,
    n_age: usize,
) -> Result<Scenario<T>> {
    build_scenario(ScenarioConfig {
        age: AgeGrid::new(a_max, n_age)?,
        coefficients: Coefficients::Diffusion {
            space: SpaceGrid::new(T::zero(), T::one(), n_cells)?,
            diffusivity: Arc::new(move |_, _| diffusivity),
            mortality: Arc::new(move |_, _| mortality),
            birth: Arc::new(move |_, _| birth),
        },
        infinite_age: false,
        holder_rho: None,
    })
}
