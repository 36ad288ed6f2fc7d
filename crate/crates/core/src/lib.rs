//! Numerical homogenization of convolution-type parabolic equations whose
//! jump kernel is periodic in space and stationary random in time.
//!
//! The crate computes the effective drift `b`, the effective diffusion `Theta`
//! and the long-run covariance `sigma sigma*` of the centered drift from cell
//! problems on the torus, and checks the homogenized description against
//! direct simulations of the rescaled equation.

pub mod cell;
pub mod config;
pub mod env;
pub mod eps_sim;
pub mod error;
pub mod evolution;
pub mod grid;
pub mod kernels;
pub mod quadrature;
pub mod runner;
pub mod stats;
pub mod stochastics;

pub use error::{Error, Result};
