//! Tracking the minimizers of slowly drifting stochastic convex objectives.
//!
//! Each time step draws `K_n` samples, runs one epoch of projected SGD from the
//! previous approximate minimizer and picks `K_n` so that the excess risk stays
//! under a target, either in mean or with high probability. The size of the
//! drift between consecutive minimizers is estimated online.
//!
//! Module map:
//! - [`problem`]: the synthetic drifting least-squares problem.
//! - [`sgd`]: projected SGD epochs, step schedules and iterate averaging.
//! - [`bounds`]: expected excess-risk bounds `b(d0, K)` for SGD.
//! - [`selector`]: sample-size rules for the mean criterion.
//! - [`ihp`]: finite-grid tail bounds and sample-size rules for the
//!   high-probability criterion.
//! - [`rho_est`]: online estimation of the drift bound.
//! - [`param_est`]: estimation of strong convexity, Lipschitz and gradient
//!   growth constants.
//! - [`kalman`]: Kalman-filter baseline for the Gaussian random-walk model.
//! - [`runner`]: configuration, experiments and result emission.

pub mod bounds;
pub mod error;
pub mod ihp;
pub mod kalman;
pub mod param_est;
pub mod problem;
pub mod rho_est;
pub mod runner;
pub mod selector;
pub mod sgd;

pub use error::{Error, Result};

/// Dense column vector used for points and gradients.
pub type Vector = nalgebra::DVector<f64>;
