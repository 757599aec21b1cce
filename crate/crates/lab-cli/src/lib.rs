//! Batch experiment runner for `ssl-dynamics`: JSON configs, a registry of
//! bundled experiments, CSV/SVG/metadata artifacts and theory-vs-simulation
//! reports.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod plot;
pub mod registry;
pub mod report;
pub mod runner;
pub mod schema;

pub use config::{ExperimentConfig, ExperimentKind};
pub use error::{LabError, Result};
pub use runner::{run, RunArtifacts, RunOptions};
