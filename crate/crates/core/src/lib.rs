//! Age-structured population dynamics with a parabolic state operator.
//!
//! The population density `u(t, a)` takes values in a finite-dimensional
//! state space (a user-supplied matrix model or a finite-volume diffusion
//! in one space dimension). Aging is exact transport on a uniform age grid,
//! so the solution operator is a fixed linear map `M` and `S(k delta) = M^k`.
//! On top of that the crate provides the renewal equation for the birth
//! output, the net reproduction operator `Q_lambda`, the Malthusian
//! parameter, the resolvent, the spectral projection onto the stable age
//! distribution, and perturbed and semilinear flows.
//!
//! ```
//! use agepop::{evolution, presets, spectral};
//!
//! let s = presets::scalar(2.0f64, 0.0, 1.0, 200).unwrap();
//! let cache = evolution::build_propagators(&s).unwrap();
//! let data = spectral::find_lambda0(&s, &cache, 1e-12).unwrap();
//! assert!((data.lambda0 - 1.5936).abs() < 1e-3);
//! ```

pub mod error;
pub mod evolution;
pub mod linalg;
pub mod model;
pub mod presets;
pub mod renewal;
mod scalar;
pub mod semigroup;
pub mod spectral;
pub mod state;

pub use error::{Error, Result};
pub use evolution::{build_propagators, mild_solve, propagate, PropagatorCache, Stepper};
pub use model::{
    build_scenario, AgeGrid, Backend, Coefficients, Scenario, ScenarioConfig, SpaceGrid,
};
pub use renewal::{birth_consistency, solve_birth, BirthTrajectory};
pub use scalar::Scalar;
pub use semigroup::{
    apply_perturbed, apply_semigroup, evolve_trajectory, solve_semilinear, OneStepMap,
};
pub use spectral::{find_lambda0, spectral_projection, SpectralData, Stability};
pub use state::{AgeDensity, StateVector};

pub type Scenario64 = Scenario<f64>;
pub type Scenario32 = Scenario<f32>;
pub type AgeDensity64 = AgeDensity<f64>;
pub type AgeDensity32 = AgeDensity<f32>;
pub type PropagatorCache64 = PropagatorCache<f64>;
pub type SpectralData64 = SpectralData<f64>;
