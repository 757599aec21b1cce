//! Bundled experiment configs, embedded at compile time.

use std::path::Path;

use crate::config::ExperimentConfig;
use crate::error::{LabError, Result};

/// `(name, json)` of every bundled config.
pub const BUNDLED: &[(&str, &str)] = &[
    ("fig1_dist1", include_str!("../configs/fig1_dist1.json")),
    ("fig1_dist2", include_str!("../configs/fig1_dist2.json")),
    ("fig2_lambda_sweep", include_str!("../configs/fig2_lambda_sweep.json")),
    ("fig2_rho_sweep", include_str!("../configs/fig2_rho_sweep.json")),
    ("fig2_inverse", include_str!("../configs/fig2_inverse.json")),
    ("fig3_temporal", include_str!("../configs/fig3_temporal.json")),
    ("fig4_depth_sweep", include_str!("../configs/fig4_depth_sweep.json")),
    ("masking_study", include_str!("../configs/masking_study.json")),
    ("critical_time_study", include_str!("../configs/critical_time_study.json")),
    ("ratio_study", include_str!("../configs/ratio_study.json")),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

pub fn bundled(name: &str) -> Option<Result<ExperimentConfig>> {
    let name = name.strip_suffix(".json").unwrap_or(name);
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, json)| ExperimentConfig::from_json_str(json))
}

pub fn all() -> Result<Vec<ExperimentConfig>> {
    BUNDLED.iter().map(|(_, json)| ExperimentConfig::from_json_str(json)).collect()
}

/// A config file path, or else a bundled config name.
pub fn resolve(arg: &str) -> Result<ExperimentConfig> {
    let path = Path::new(arg);
    if path.is_file() {
        return ExperimentConfig::from_path(path);
    }
    bundled(arg).unwrap_or_else(|| {
        Err(LabError::Usage(format!("`{arg}` is neither a config file nor a bundled experiment (known: {})", names().collect::<Vec<_>>().join(", "))))
    })
}
