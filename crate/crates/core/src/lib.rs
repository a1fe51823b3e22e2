//! Simulation and large-sample prediction for fixed-step stochastic gradient algorithms.
//!
//! The crate runs preconditioned SGD, SGLD and their momentum and control-variate
//! variants on smooth statistical models, and computes the Ornstein–Uhlenbeck
//! limit those chains approach as the sample size grows: stationary and marginal
//! covariances, iterate-average covariances, mixing times and tunings that hit a
//! requested stationary covariance. [`diagnostics`] measures the same quantities
//! on simulated chains so the two can be compared.

pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod inference;
pub mod linalg;
pub mod models;
pub mod rng;
pub mod theory;

pub use error::{Error, Result};
