//! Split conformal prediction for hierarchical (aggregation-constrained)
//! multivariate regression.
//!
//! The crate covers the whole pipeline: structural matrices for aggregation
//! hierarchies, reconciliation projections (OLS, WLS, MinT and their average),
//! ellipsoidal and component-wise conformal calibration, the synthetic data
//! generator used to benchmark the procedures, and a seeded Monte-Carlo
//! harness that aggregates coverage and efficiency metrics over many runs.

pub mod cli;
pub mod conformal;
pub mod datagen;
pub mod elliptical;
pub mod error;
pub mod experiment;
pub mod hierarchy;
pub mod linalg;
pub mod projection;
pub mod regression;

pub use error::{Error, Result};
pub use hierarchy::Hierarchy;
pub use linalg::SymmetricMatrix;
pub use projection::{CovarianceEstimate, ProjectionMatrix, ReconciliationMethod};
