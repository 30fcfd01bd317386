//! Exact sampling, covariance structure and regularity experiments for the
//! damped stochastic Klein-Gordon equation
//! `∂²_t u + a ∂_t u − ∂²_x u + m² u = Ẇ` on `[0, T] × ℝ` with zero initial data.

pub mod cone;
pub mod coords;
pub mod covariance;
pub mod error;
pub mod kernels;
pub mod numerics;
pub mod reduction;
pub mod regularity;
pub mod sampler;

pub use coords::{CharCoords, SpaceTimePoint};
pub use error::{KgError, Result};
pub use kernels::{ModelParams, Regime};
