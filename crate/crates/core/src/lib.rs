//! Rivers of the quadratic equation `x' = x^2 - t x` and of its additive-noise
//! perturbation `dX = X(X - t) dt + sigma dW`.
//!
//! The crate provides
//! * reproducible Brownian paths with bridge refinement ([`paths`]),
//! * the explicit deterministic solution and its critical branch ([`closed_form`]),
//! * the linear model with a stationary Ornstein-Uhlenbeck river ([`linear_river`]),
//! * an Euler-Maruyama engine with fate classification ([`sde`]),
//! * scale functions, speed measures and Feller's test ([`diffusion`]),
//! * Monte Carlo estimators of blow-up and exit probabilities ([`estimators`]),
//! * pathwise river localization and the recursive expansion ([`river`]).
//!
//! All numerical code is generic over [`Real`], implemented for `f32` and `f64`.
//! The aliases at the crate root fix the scalar to `f64`.

pub mod closed_form;
pub mod diffusion;
pub mod error;
pub mod estimators;
pub mod linear_river;
pub mod oracle;
pub mod paths;
pub mod quadrature;
pub mod river;
pub mod scalar;
pub mod sde;
pub mod special;
pub mod validation;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Grid64 = paths::Grid<f64>;
pub type BrownianPath64 = paths::BrownianPath<f64>;
pub type SimOptions64 = sde::SimOptions<f64>;
pub type Trajectory64 = sde::Trajectory<f64>;
pub type Drift64 = diffusion::Drift<f64>;
pub type MCEstimate64 = estimators::MCEstimate<f64>;
pub type RiverEstimate64 = river::RiverEstimate<f64>;
pub type LinearModel64 = linear_river::LinearModel<f64>;
