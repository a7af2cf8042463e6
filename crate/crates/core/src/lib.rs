//! Nonlinear Poisson regression with a single-hidden-layer neural network.
//!
//! The crate provides four model families over count data and the machinery
//! to compare them:
//!
//! - [`glm`]: linear Poisson regression (log link) fitted by IRLS — the
//!   baseline.
//! - [`optimizer`]: penalized maximum-likelihood network training with
//!   cross-validation and prediction committees.
//! - [`evidence`]: hyperparameter re-estimation from the Hessian spectrum,
//!   alternated with weight optimization.
//! - [`hmc`]: hybrid Monte Carlo over network weights, with predictive
//!   summaries and error bars.
//! - [`hybrid`]: evidence-optimized prior followed by fixed-prior HMC, plus
//!   per-covariate relevance reports.
//!
//! [`data`] generates the benchmark simulation schemes and handles CSV
//! datasets; [`metrics`] computes evaluation metrics and the potential scale
//! reduction convergence diagnostic.

pub mod bundle;
pub mod data;
pub mod error;
pub mod evidence;
pub mod glm;
pub mod hmc;
pub mod hybrid;
pub mod metrics;
pub mod net;
pub mod objective;
pub mod optimizer;
pub mod seeding;

pub use error::{Error, Result};
