//! Solver and verification suite for non-unitary linear dynamics
//! du/dt = -A(t) u + b(t), written as a kernel-weighted combination of
//! Hamiltonian propagators.
//!
//! The generator splits as A = L + iH with both L and H Hermitian. When
//! L(t) is positive semidefinite the exact propagator admits the integral
//! representation
//!
//!   T exp(-int_0^T A) = int_R  1/(pi (1+k^2)) * T exp(-i int_0^T (H + k L)) dk,
//!
//! so the non-unitary flow becomes a Cauchy-Lorentz-weighted average of
//! unitary flows. The crate discretizes that integral (truncation cutoff K,
//! trapezoid nodes), drives the per-node unitaries with exact, product-formula
//! or interaction-picture backends, and accounts for the success probability
//! a linear-combination-of-unitaries implementation would have. Everything is
//! cross-checked against an independent Runge-Kutta oracle.
//!
//! Modules:
//! - [`operators`]: generators, Hermitian split, spectral shift, norms.
//! - [`oracle`]: brute-force ground truth and identity/principal-value checks.
//! - [`quadrature`]: kernel truncation and trapezoid grids (1D and Duhamel 2D).
//! - [`propagators`]: exact stepping, Trotter-Suzuki formulas, interaction picture.
//! - [`solver`]: assembled solves with success-probability semantics.
//! - [`estimator`]: hybrid shot-noise observable estimation.
//! - [`planner`]: closed-form resource/query-count predictions.
//! - [`cap`]: 1D complex-absorbing-potential demonstration.
//! - [`problem`]: JSON problem format and seeded random instances.

pub mod cap;
pub mod error;
pub mod estimator;
pub mod linalg;
pub mod manifest;
pub mod operators;
pub mod oracle;
pub mod planner;
pub mod problem;
pub mod propagators;
pub mod quadrature;
pub mod solver;
pub mod util;

pub use error::{LchsError, Result};
pub use linalg::{CMatrix, CVector};
