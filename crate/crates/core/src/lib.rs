//! Constructive approximation in Gaussian Sobolev spaces.
//!
//! - [`hermite`]: Hermite polynomials, Gauss–Hermite rules, expansions.
//! - [`ou_kernel`]: Mehler kernel, subordination kernel `K_sigma`, fractional
//!   Ornstein–Uhlenbeck operator.
//! - [`norms`]: Gaussian Lebesgue, Sobolev and fractional seminorm estimators.
//! - [`widths`]: exact and SVD-based widths.
//! - [`assembly`]: partition-of-unity assembly of rank-`n` operators on `R^d`.
//! - [`experiments`]: configuration-driven experiment runner.

pub mod assembly;
pub mod error;
pub mod experiments;
pub mod hermite;
pub mod norms;
pub mod ou_kernel;
pub mod quad;
pub mod widths;

pub use error::{Error, Result};
