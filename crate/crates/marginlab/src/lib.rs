//! Numerical laboratory for benign overfitting of maximum-margin binary
//! linear classifiers: mixture-model data generation, three max-margin
//! computations, concentration-event auditing, exact and Monte Carlo
//! test-error evaluation, bound prediction, geometric decompositions, and a
//! seeded sweep harness.

pub mod classify;
pub mod error;
pub mod events;
pub mod geometry;
pub mod gram;
pub mod model;
pub mod risk;
pub mod rng;
pub mod sweep;

pub use error::{Error, Result};
