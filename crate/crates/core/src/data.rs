//! Per-feature data parameters, validation, population moments and joint
//! Gaussian sampling.
//!
//! A [`GaussianDataSpec`] describes a centered distribution whose covariance
//! blocks `Σˣˣ`, `Σʸˣ`, `Σʸʸ` are all diagonal. Coordinate `i` is described
//! by a [`FeatureParams`]: `lambda = Σʸˣᵢᵢ`, `sigma_sq = Σˣˣᵢᵢ` and
//! `y_var = Σʸʸᵢᵢ`.

use std::fmt;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{stream_rng, streams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("feature {feature}: input variance must be positive, got {value}")]
    NonPositiveVariance { feature: usize, value: f64 },
    #[error("cannot sample: {0}")]
    Infeasible(Violation),
    #[error("sample count must be at least 1")]
    EmptyBatch,
    #[error("batch shape mismatch: x is {x_rows}x{x_cols}, y is {y_rows}x{y_cols}")]
    ShapeMismatch { x_rows: usize, x_cols: usize, y_rows: usize, y_cols: usize },
    #[error("batch contains non-finite entries")]
    NonFinite,
}

/// Covariance parameters of one coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureParams {
    /// Cross-covariance `E[yᵢxᵢ]`.
    pub lambda: f64,
    /// Input variance `E[xᵢ²]`.
    pub sigma_sq: f64,
    /// Target variance `E[yᵢ²]`; only the sampler reads it.
    pub y_var: f64,
}

impl FeatureParams {
    /// Target variance defaults to the input variance.
    pub fn new(lambda: f64, sigma_sq: f64) -> Self {
        Self { lambda, sigma_sq, y_var: sigma_sq }
    }

    pub fn with_y_var(lambda: f64, sigma_sq: f64, y_var: f64) -> Self {
        Self { lambda, sigma_sq, y_var }
    }

    /// Parameterise by covariance and regression coefficient (`σ² = λ/ρ`).
    pub fn from_lambda_rho(lambda: f64, rho: f64) -> Self {
        Self::new(lambda, lambda / rho)
    }

    /// `ρ = λ/σ²`. Panics-free: returns NaN/inf for degenerate variance, use
    /// [`regression_coefficient`] for the checked version.
    pub fn rho(&self) -> f64 {
        self.lambda / self.sigma_sq
    }
}

/// Checked regression coefficient `λ/σ²`.
pub fn regression_coefficient(p: &FeatureParams) -> Result<f64, DataError> {
    if !(p.sigma_sq > 0.0) {
        return Err(DataError::NonPositiveVariance { feature: 0, value: p.sigma_sq });
    }
    Ok(p.lambda / p.sigma_sq)
}

/// Diagonal covariance description of a `d`-dimensional pair `(x, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianDataSpec {
    pub features: Vec<FeatureParams>,
}

impl GaussianDataSpec {
    pub fn new(features: Vec<FeatureParams>) -> Self {
        Self { features }
    }

    /// One feature per `(λ, ρ)` pair, with `y_var = σ²`.
    pub fn from_lambda_rho(pairs: &[(f64, f64)]) -> Self {
        Self::new(pairs.iter().map(|&(l, r)| FeatureParams::from_lambda_rho(l, r)).collect())
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }
}

/// A single failed invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub feature: Option<usize>,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    EmptySpec,
    NonFinite,
    NonPositiveInputVariance(f64),
    NonPositiveTargetVariance(f64),
    /// `λ ≤ 0`: representable and samplable, but outside the assumptions of
    /// the dynamics theory.
    NonPositiveCovariance(f64),
    /// `λ² > σ²·y_var`, so the 2×2 joint covariance is not PSD.
    NotPositiveSemidefinite { lambda_sq: f64, bound: f64 },
}

impl Violation {
    /// Whether this violation prevents drawing samples.
    pub fn blocks_sampling(&self) -> bool {
        !matches!(self.kind, ViolationKind::NonPositiveCovariance(_))
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(i) = self.feature {
            write!(f, "feature {i}: ")?;
        }
        match &self.kind {
            ViolationKind::EmptySpec => write!(f, "spec has no features"),
            ViolationKind::NonFinite => write!(f, "non-finite parameter"),
            ViolationKind::NonPositiveInputVariance(v) => write!(f, "input variance {v} is not positive"),
            ViolationKind::NonPositiveTargetVariance(v) => write!(f, "target variance {v} is not positive"),
            ViolationKind::NonPositiveCovariance(l) => {
                write!(f, "covariance {l} is not positive (outside dynamics-theory assumptions)")
            }
            ViolationKind::NotPositiveSemidefinite { lambda_sq, bound } => {
                write!(f, "joint covariance not PSD: lambda^2 = {lambda_sq} > sigma^2 * y_var = {bound}")
            }
        }
    }
}

/// All invariant violations of `spec`; empty iff `spec` is valid. With
/// `for_sampling`, the per-coordinate PSD condition `λ² ≤ σ²·y_var` is also
/// checked.
pub fn validate_spec(spec: &GaussianDataSpec, for_sampling: bool) -> Vec<Violation> {
    let mut out = Vec::new();
    if spec.features.is_empty() {
        out.push(Violation { feature: None, kind: ViolationKind::EmptySpec });
        return out;
    }
    for (i, p) in spec.features.iter().enumerate() {
        let at = |kind| Violation { feature: Some(i), kind };
        if !(p.lambda.is_finite() && p.sigma_sq.is_finite() && p.y_var.is_finite()) {
            out.push(at(ViolationKind::NonFinite));
            continue;
        }
        if p.sigma_sq <= 0.0 {
            out.push(at(ViolationKind::NonPositiveInputVariance(p.sigma_sq)));
        }
        if p.y_var <= 0.0 {
            out.push(at(ViolationKind::NonPositiveTargetVariance(p.y_var)));
        }
        if p.lambda <= 0.0 {
            out.push(at(ViolationKind::NonPositiveCovariance(p.lambda)));
        }
        if for_sampling && p.sigma_sq > 0.0 && p.y_var > 0.0 {
            let lambda_sq = p.lambda * p.lambda;
            let bound = p.sigma_sq * p.y_var;
            if lambda_sq > bound {
                out.push(at(ViolationKind::NotPositiveSemidefinite { lambda_sq, bound }));
            }
        }
    }
    out
}

/// Diagonals `(Σˣˣ, Σʸˣ)` consumed by the analytic gradients.
pub fn population_covariances(spec: &GaussianDataSpec) -> (Vec<f64>, Vec<f64>) {
    let xx = spec.features.iter().map(|p| p.sigma_sq).collect();
    let yx = spec.features.iter().map(|p| p.lambda).collect();
    (xx, yx)
}

/// `n` paired rows `(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    /// `n × d` inputs.
    pub x: DMatrix<f64>,
    /// `n × d` targets.
    pub y: DMatrix<f64>,
}

impl SampleBatch {
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self, DataError> {
        if x.shape() != y.shape() {
            return Err(DataError::ShapeMismatch {
                x_rows: x.nrows(),
                x_cols: x.ncols(),
                y_rows: y.nrows(),
                y_cols: y.ncols(),
            });
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(DataError::NonFinite);
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Same rows with `x` and `y` exchanged.
    pub fn swapped(&self) -> Self {
        Self { x: self.y.clone(), y: self.x.clone() }
    }
}

/// Draw `n` iid rows with per-coordinate joint covariance
/// `[[σ², λ], [λ, y_var]]`, independent across coordinates.
///
/// Realised as `y = ρx + ν`, `ν ~ N(0, y_var − λ²/σ²)`.
pub fn sample_gaussian_pairs(spec: &GaussianDataSpec, n: usize, seed: u64) -> Result<SampleBatch, DataError> {
    if n == 0 {
        return Err(DataError::EmptyBatch);
    }
    if let Some(v) = validate_spec(spec, true).into_iter().find(Violation::blocks_sampling) {
        return Err(DataError::Infeasible(v));
    }
    let mut rng = stream_rng(seed, streams::SAMPLES);
    Ok(sample_with(spec, n, &mut rng))
}

/// Sampling kernel shared with the SGD trainer, which keeps one generator
/// alive across steps. `spec` must already be valid for sampling.
pub(crate) fn sample_with<R: Rng + ?Sized>(spec: &GaussianDataSpec, n: usize, rng: &mut R) -> SampleBatch {
    let d = spec.dim();
    let coeffs: Vec<(f64, f64, f64)> = spec
        .features
        .iter()
        .map(|p| {
            let rho = p.lambda / p.sigma_sq;
            let resid = (p.y_var - p.lambda * rho).max(0.0);
            (p.sigma_sq.sqrt(), rho, resid.sqrt())
        })
        .collect();
    let mut x = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n * d);
    for _ in 0..n {
        for &(sx, rho, sn) in &coeffs {
            let g1: f64 = rng.sample(StandardNormal);
            let g2: f64 = rng.sample(StandardNormal);
            let xv = sx * g1;
            x.push(xv);
            y.push(rho * xv + sn * g2);
        }
    }
    SampleBatch { x: DMatrix::from_row_slice(n, d, &x), y: DMatrix::from_row_slice(n, d, &y) }
}

/// Second moments `E[xxᵀ]`, `E[yxᵀ]` and optionally `E[yyᵀ]`; everything the
/// quadratic losses and their gradients depend on.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondMoments {
    pub xx: DMatrix<f64>,
    pub yx: DMatrix<f64>,
    pub yy: Option<DMatrix<f64>>,
}

impl SecondMoments {
    pub fn from_diagonals(xx: &[f64], yx: &[f64]) -> Self {
        Self {
            xx: DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(xx)),
            yx: DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(yx)),
            yy: None,
        }
    }

    /// Exact population moments of a diagonal spec.
    pub fn population(spec: &GaussianDataSpec) -> Self {
        let (xx, yx) = population_covariances(spec);
        let yy: Vec<f64> = spec.features.iter().map(|p| p.y_var).collect();
        let mut m = Self::from_diagonals(&xx, &yx);
        m.yy = Some(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&yy)));
        m
    }

    /// Uncentered empirical moments `(1/n)XᵀX`, `(1/n)YᵀX`, `(1/n)YᵀY`.
    pub fn from_batch(batch: &SampleBatch) -> Self {
        let yt = batch.y.transpose();
        let mut m = Self::cross_from_batch(batch);
        m.yy = Some(&yt * &batch.y / batch.len() as f64);
        m
    }

    /// As [`SecondMoments::from_batch`] without `E[yyᵀ]`.
    pub fn cross_from_batch(batch: &SampleBatch) -> Self {
        let n = batch.len() as f64;
        let xt = batch.x.transpose();
        Self { xx: &xt * &batch.x / n, yx: (xt * &batch.y).transpose() / n, yy: None }
    }

    pub fn dim(&self) -> usize {
        self.xx.nrows()
    }
}
