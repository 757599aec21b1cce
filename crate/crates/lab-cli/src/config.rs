//! Experiment configs: strict JSON with a `kind` tag and a kind-specific
//! `parameters` object.
//!
//! ```json
//! {
//!   "name": "fig2_rho_sweep",
//!   "kind": "ode_sweep",
//!   "parameters": { "seeds": [0], "objectives": ["jepa", "mae"], ... }
//! }
//! ```
//!
//! Unknown fields are rejected everywhere. Every kind requires a non-empty
//! `parameters.seeds` list, even when the experiment is deterministic.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use ssl_dynamics::Objective;

use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    OdeSweep,
    NetTrain,
    CriticalTimeStudy,
    GenmodelTemporal,
    GenmodelMasking,
    RatioStudy,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::OdeSweep,
        ExperimentKind::NetTrain,
        ExperimentKind::CriticalTimeStudy,
        ExperimentKind::GenmodelTemporal,
        ExperimentKind::GenmodelMasking,
        ExperimentKind::RatioStudy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::OdeSweep => "ode_sweep",
            ExperimentKind::NetTrain => "net_train",
            ExperimentKind::CriticalTimeStudy => "critical_time_study",
            ExperimentKind::GenmodelTemporal => "genmodel_temporal",
            ExperimentKind::GenmodelMasking => "genmodel_masking",
            ExperimentKind::RatioStudy => "ratio_study",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Horizontal axis used for sampled output and plots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisScale {
    Linear,
    #[default]
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSpec {
    pub lambda: f64,
    pub rho: f64,
}

/// A tracked feature at a fixed coordinate of a wider model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexedFeature {
    pub index: usize,
    pub lambda: f64,
    pub rho: f64,
}

fn default_p() -> f64 {
    0.5
}
fn default_samples() -> usize {
    400
}
fn default_lr() -> f64 {
    1e-2
}
fn default_record_every() -> usize {
    10
}
fn default_halvings() -> u32 {
    6
}
fn default_one() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdeSweepParams {
    pub seeds: Vec<u64>,
    pub objectives: Vec<Objective>,
    pub depths: Vec<u32>,
    pub features: Vec<FeatureSpec>,
    pub epsilon: f64,
    /// Integration horizon; omitted means automatic.
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default = "default_p")]
    pub p: f64,
    /// Rows written per trajectory (plus `t = 0`).
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub axis: AxisScale,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    Structured { epsilon: f64 },
    Gaussian { scale: f64 },
    Balanced { scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrainingMode {
    Population,
    Sgd { batch_size: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetTrainParams {
    pub seeds: Vec<u64>,
    pub objectives: Vec<Objective>,
    pub d: usize,
    pub depth: usize,
    /// Tracked features; every other coordinate has `λ = 0` and variance
    /// `background_variance`.
    pub features: Vec<IndexedFeature>,
    #[serde(default = "default_one")]
    pub background_variance: f64,
    pub init: InitSpec,
    pub training: TrainingMode,
    #[serde(default = "default_lr")]
    pub lr: f64,
    pub steps: usize,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default = "default_p")]
    pub p: f64,
    /// Retries with a halved learning rate after divergence.
    #[serde(default = "default_halvings")]
    pub max_lr_halvings: u32,
    #[serde(default)]
    pub axis: AxisScale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticalTimeParams {
    pub seeds: Vec<u64>,
    pub objectives: Vec<Objective>,
    pub depths: Vec<u32>,
    pub lambdas: Vec<f64>,
    pub rhos: Vec<f64>,
    pub epsilons: Vec<f64>,
    #[serde(default = "default_p")]
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatioStudyParams {
    pub seeds: Vec<u64>,
    pub objectives: Vec<Objective>,
    pub depths: Vec<u32>,
    pub lambda: f64,
    pub rho: f64,
    pub rho_prime: f64,
    pub epsilons: Vec<f64>,
    #[serde(default = "default_p")]
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemporalParams {
    /// One run per seed.
    pub seeds: Vec<u64>,
    /// `‖v^a‖²`, one contiguous block of `block_len` pixels per image.
    pub norms_sq: Vec<f64>,
    pub block_len: usize,
    pub autocorr: Vec<f64>,
    pub noise_std: Vec<f64>,
    /// Sequence lengths `T`; shorter ones are prefixes of the longest.
    pub lengths: Vec<usize>,
    #[serde(default)]
    pub burn_in: Option<usize>,
    /// Write `|QᵀΣ̂ˣʸQ|` for the first seed at the longest `T`.
    #[serde(default = "default_true")]
    pub heatmap: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskingParams {
    pub seeds: Vec<u64>,
    pub d: usize,
    pub f: f64,
    /// The first `active_count` factors have variance `active_var`, the
    /// rest `inactive_var`.
    pub active_count: usize,
    pub active_var: f64,
    #[serde(default)]
    pub inactive_var: f64,
    pub noise_var: f64,
    pub sample_sizes: Vec<usize>,
    pub basis_seed: u64,
    /// Compute full covariances and the diagonalizability error.
    #[serde(default = "default_true")]
    pub diag_error: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Experiment {
    OdeSweep(OdeSweepParams),
    NetTrain(NetTrainParams),
    CriticalTimeStudy(CriticalTimeParams),
    GenmodelTemporal(TemporalParams),
    GenmodelMasking(MaskingParams),
    RatioStudy(RatioStudyParams),
}

impl Experiment {
    pub fn kind(&self) -> ExperimentKind {
        match self {
            Experiment::OdeSweep(_) => ExperimentKind::OdeSweep,
            Experiment::NetTrain(_) => ExperimentKind::NetTrain,
            Experiment::CriticalTimeStudy(_) => ExperimentKind::CriticalTimeStudy,
            Experiment::GenmodelTemporal(_) => ExperimentKind::GenmodelTemporal,
            Experiment::GenmodelMasking(_) => ExperimentKind::GenmodelMasking,
            Experiment::RatioStudy(_) => ExperimentKind::RatioStudy,
        }
    }

    pub fn seeds(&self) -> &[u64] {
        match self {
            Experiment::OdeSweep(p) => &p.seeds,
            Experiment::NetTrain(p) => &p.seeds,
            Experiment::CriticalTimeStudy(p) => &p.seeds,
            Experiment::GenmodelTemporal(p) => &p.seeds,
            Experiment::GenmodelMasking(p) => &p.seeds,
            Experiment::RatioStudy(p) => &p.seeds,
        }
    }

    fn seeds_mut(&mut self) -> &mut Vec<u64> {
        match self {
            Experiment::OdeSweep(p) => &mut p.seeds,
            Experiment::NetTrain(p) => &mut p.seeds,
            Experiment::CriticalTimeStudy(p) => &mut p.seeds,
            Experiment::GenmodelTemporal(p) => &mut p.seeds,
            Experiment::GenmodelMasking(p) => &mut p.seeds,
            Experiment::RatioStudy(p) => &mut p.seeds,
        }
    }

    /// Depths whose time rescaling applies to this experiment's outputs.
    pub fn depths(&self) -> Vec<u32> {
        match self {
            Experiment::OdeSweep(p) => p.depths.clone(),
            Experiment::NetTrain(p) => vec![p.depth as u32],
            Experiment::CriticalTimeStudy(p) => p.depths.clone(),
            Experiment::RatioStudy(p) => p.depths.clone(),
            Experiment::GenmodelTemporal(_) | Experiment::GenmodelMasking(_) => vec![],
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    name: String,
    #[serde(default)]
    description: Option<String>,
    kind: ExperimentKind,
    parameters: serde_json::Value,
    #[serde(default)]
    output_dir: Option<PathBuf>,
}

/// A validated experiment config plus the JSON it was parsed from.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub description: Option<String>,
    pub output_dir: Option<PathBuf>,
    pub experiment: Experiment,
    /// The config exactly as read, echoed into run metadata.
    pub raw: serde_json::Value,
}

impl ExperimentConfig {
    pub fn kind(&self) -> ExperimentKind {
        self.experiment.kind()
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| LabError::config("<root>", e.to_string()))?;
        Self::from_value(raw)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn from_value(raw: serde_json::Value) -> Result<Self> {
        let parsed: RawConfig = serde_path_to_error::deserialize(raw.clone()).map_err(|e| {
            let path = e.path().to_string();
            LabError::config(if path == "." { "<root>".to_string() } else { path }, e.into_inner().to_string())
        })?;
        if parsed.name.trim().is_empty() {
            return Err(LabError::config("name", "must not be empty"));
        }
        let p = parsed.parameters;
        let experiment = match parsed.kind {
            ExperimentKind::OdeSweep => Experiment::OdeSweep(params(p)?),
            ExperimentKind::NetTrain => Experiment::NetTrain(params(p)?),
            ExperimentKind::CriticalTimeStudy => Experiment::CriticalTimeStudy(params(p)?),
            ExperimentKind::GenmodelTemporal => Experiment::GenmodelTemporal(params(p)?),
            ExperimentKind::GenmodelMasking => Experiment::GenmodelMasking(params(p)?),
            ExperimentKind::RatioStudy => Experiment::RatioStudy(params(p)?),
        };
        validate(&experiment)?;
        Ok(Self { name: parsed.name, description: parsed.description, output_dir: parsed.output_dir, experiment, raw })
    }

    /// Replaces every seed list with `[seed]`.
    pub fn override_seed(&mut self, seed: u64) {
        *self.experiment.seeds_mut() = vec![seed];
    }
}

fn params<T: DeserializeOwned>(value: serde_json::Value) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let inner = e.path().to_string();
        let path = if inner == "." { "parameters".to_string() } else { format!("parameters.{inner}") };
        LabError::config(path, e.into_inner().to_string())
    })
}

fn field(name: &str) -> String {
    format!("parameters.{name}")
}

fn nonempty<T>(name: &str, v: &[T]) -> Result<()> {
    if v.is_empty() {
        return Err(LabError::config(field(name), "must list at least one value"));
    }
    Ok(())
}

fn check(ok: bool, name: &str, msg: impl fmt::Display) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(LabError::config(field(name), msg.to_string()))
    }
}

fn unit_open(name: &str, v: f64) -> Result<()> {
    check(v > 0.0 && v < 1.0, name, format_args!("must lie in (0, 1), got {v}"))
}

fn positive(name: &str, v: f64) -> Result<()> {
    check(v > 0.0 && v.is_finite(), name, format_args!("must be positive, got {v}"))
}

fn depths_ok(depths: &[u32]) -> Result<()> {
    nonempty("depths", depths)?;
    check(depths.iter().all(|&l| l >= 1), "depths", "every depth must be at least 1")
}

fn validate(e: &Experiment) -> Result<()> {
    check(!e.seeds().is_empty(), "seeds", "must list at least one seed")?;
    match e {
        Experiment::OdeSweep(p) => {
            nonempty("objectives", &p.objectives)?;
            depths_ok(&p.depths)?;
            nonempty("features", &p.features)?;
            for (i, f) in p.features.iter().enumerate() {
                positive(&format!("features[{i}].lambda"), f.lambda)?;
                positive(&format!("features[{i}].rho"), f.rho)?;
            }
            unit_open("epsilon", p.epsilon)?;
            if let Some(h) = p.horizon {
                positive("horizon", h)?;
            }
            unit_open("p", p.p)?;
            check(p.samples >= 2, "samples", "must be at least 2")
        }
        Experiment::NetTrain(p) => {
            nonempty("objectives", &p.objectives)?;
            check(p.d >= 1, "d", "must be at least 1")?;
            check(p.depth >= 1, "depth", "must be at least 1")?;
            nonempty("features", &p.features)?;
            for (i, f) in p.features.iter().enumerate() {
                check(f.index < p.d, &format!("features[{i}].index"), format_args!("{} is out of range for d = {}", f.index, p.d))?;
                positive(&format!("features[{i}].lambda"), f.lambda)?;
                positive(&format!("features[{i}].rho"), f.rho)?;
                check(p.features[..i].iter().all(|g| g.index != f.index), &format!("features[{i}].index"), "duplicate feature index")?;
            }
            positive("background_variance", p.background_variance)?;
            match p.init {
                InitSpec::Structured { epsilon } => unit_open("init.epsilon", epsilon)?,
                InitSpec::Gaussian { scale } | InitSpec::Balanced { scale } => positive("init.scale", scale)?,
            }
            if let TrainingMode::Sgd { batch_size } = p.training {
                check(batch_size >= 1, "training.batch_size", "must be at least 1")?;
            }
            positive("lr", p.lr)?;
            check(p.record_every >= 1, "record_every", "must be at least 1")?;
            unit_open("p", p.p)
        }
        Experiment::CriticalTimeStudy(p) => {
            nonempty("objectives", &p.objectives)?;
            depths_ok(&p.depths)?;
            nonempty("lambdas", &p.lambdas)?;
            nonempty("rhos", &p.rhos)?;
            nonempty("epsilons", &p.epsilons)?;
            p.lambdas.iter().try_for_each(|&v| positive("lambdas", v))?;
            p.rhos.iter().try_for_each(|&v| positive("rhos", v))?;
            p.epsilons.iter().try_for_each(|&v| unit_open("epsilons", v))?;
            unit_open("p", p.p)
        }
        Experiment::RatioStudy(p) => {
            nonempty("objectives", &p.objectives)?;
            depths_ok(&p.depths)?;
            nonempty("epsilons", &p.epsilons)?;
            positive("lambda", p.lambda)?;
            positive("rho", p.rho)?;
            positive("rho_prime", p.rho_prime)?;
            check(p.rho_prime >= p.rho, "rho_prime", "must be at least rho")?;
            p.epsilons.iter().try_for_each(|&v| unit_open("epsilons", v))?;
            unit_open("p", p.p)
        }
        Experiment::GenmodelTemporal(p) => {
            nonempty("norms_sq", &p.norms_sq)?;
            p.norms_sq.iter().try_for_each(|&v| positive("norms_sq", v))?;
            check(p.block_len >= 1, "block_len", "must be at least 1")?;
            check(p.autocorr.len() == p.norms_sq.len(), "autocorr", "needs one entry per image")?;
            check(p.noise_std.len() == p.norms_sq.len(), "noise_std", "needs one entry per image")?;
            p.autocorr.iter().try_for_each(|&v| unit_open("autocorr", v))?;
            check(p.noise_std.iter().all(|&v| v >= 0.0 && v.is_finite()), "noise_std", "entries must be non-negative")?;
            nonempty("lengths", &p.lengths)?;
            check(p.lengths.iter().all(|&t| t >= 3), "lengths", "every length must be at least 3")
        }
        Experiment::GenmodelMasking(p) => {
            check(p.d >= 2, "d", "must be at least 2")?;
            unit_open("f", p.f)?;
            check(p.active_count <= p.d, "active_count", "must not exceed d")?;
            check(p.active_var >= 0.0 && p.active_var.is_finite(), "active_var", "must be non-negative")?;
            check(p.inactive_var >= 0.0 && p.inactive_var.is_finite(), "inactive_var", "must be non-negative")?;
            check(p.noise_var >= 0.0 && p.noise_var.is_finite(), "noise_var", "must be non-negative")?;
            nonempty("sample_sizes", &p.sample_sizes)?;
            check(p.sample_sizes.iter().all(|&n| n >= 2), "sample_sizes", "every size must be at least 2")
        }
    }
}
