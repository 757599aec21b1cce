//! Training dynamics of joint-embedding (JEPA) and reconstruction (MAE)
//! objectives on deep linear networks.
//!
//! The crate is organised bottom-up:
//!
//! - [`data`]: per-feature covariance parameters, validation and joint
//!   Gaussian sampling.
//! - [`ode`]: the decoupled per-feature gradient-flow ODEs, their fixed
//!   points, an adaptive Dormand–Prince integrator and critical-time
//!   measurement.
//! - [`closed_form`]: implicit solutions, the Lerch transcendent and the
//!   analytic critical-time expansions.
//! - [`network`]: full deep linear networks (encoder stack plus linear
//!   decoder), population and minibatch gradients, (S)GD training and
//!   diagnostics.
//! - [`generative`]: the random-masking and temporal (AR(1)) linear
//!   generative models, empirical covariances and a simultaneous
//!   diagonalizability diagnostic.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod closed_form;
pub mod data;
pub mod generative;
pub mod linalg;
pub mod network;
pub mod objective;
pub mod ode;
pub mod rng;

/// Library version, recorded in experiment metadata.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use data::{FeatureParams, GaussianDataSpec, SampleBatch};
pub use objective::Objective;
