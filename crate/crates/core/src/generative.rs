//! Linear generative models whose two views have simultaneously
//! diagonalizable covariances, plus estimators and a diagnostic for how
//! close a pair of empirical covariances is to that condition.
//!
//! - Random masking: `z = Σ_k s_k B_k + η`, `x = z ⊙ m`, `y = z ⊙ (1 − m)`
//!   with an independent Bernoulli(`f`) mask per coordinate.
//! - Temporal: `z^t = Σ_a u^a(t) v^a + ξ^t` with AR(1) latents
//!   `u^a(t+1) = γ_a u^a(t) + √(1−γ_a²) η`, and views `x = z^t`,
//!   `y = z^{t+1}`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, FeatureParams, SampleBatch, SecondMoments};
use crate::linalg::haar_orthogonal;
use crate::rng::{stream_rng, streams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenerativeError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, GenerativeError> {
    Err(GenerativeError::InvalidSpec(msg.into()))
}

// ------------------------------------------------------------- masking

/// Random-masking model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskingSpec {
    pub d: usize,
    /// Probability that a coordinate is kept in `x`.
    pub f: f64,
    /// `⟨s_k²⟩` per factor; zeros mark inactive factors.
    pub coeff_vars: Vec<f64>,
    /// `⟨η²⟩`.
    pub noise_var: f64,
    pub basis_seed: u64,
}

impl MaskingSpec {
    pub fn validate(&self) -> Result<(), GenerativeError> {
        if self.d == 0 {
            return invalid("d must be at least 1");
        }
        if !(self.f > 0.0 && self.f < 1.0) {
            return invalid(format!("f must lie in (0, 1), got {}", self.f));
        }
        if self.coeff_vars.len() != self.d {
            return invalid(format!("coeff_vars has length {}, expected d = {}", self.coeff_vars.len(), self.d));
        }
        if let Some((k, v)) = self.coeff_vars.iter().enumerate().find(|(_, v)| !(**v >= 0.0 && v.is_finite())) {
            return invalid(format!("coeff_vars[{k}] = {v} must be non-negative"));
        }
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return invalid(format!("noise_var must be non-negative, got {}", self.noise_var));
        }
        Ok(())
    }

    /// `⟨s²⟩`, the mean factor variance.
    pub fn mean_coeff_var(&self) -> f64 {
        self.coeff_vars.iter().sum::<f64>() / self.coeff_vars.len() as f64
    }

    /// Orthonormal factor basis; column `k` is `B_k`. Entries are
    /// approximately `N(0, 1/d)`.
    pub fn basis(&self) -> DMatrix<f64> {
        haar_orthogonal(self.d, &mut stream_rng(self.basis_seed, streams::BASIS))
    }
}

/// Per-factor `(σ², λ)` in the basis `B` (and `y_var` for the complementary
/// view). Factors below the mean variance come out with `λ < 0`.
pub fn masking_theoretical_params(spec: &MaskingSpec) -> Result<Vec<FeatureParams>, GenerativeError> {
    spec.validate()?;
    let f = spec.f;
    let s_bar = spec.mean_coeff_var();
    let eta = spec.noise_var;
    Ok(spec
        .coeff_vars
        .iter()
        .map(|&si| {
            let sigma_sq = f * f * si + f * eta + (f - f * f) * s_bar;
            let g = 1.0 - f;
            let y_var = g * g * si + g * eta + (g - g * g) * s_bar;
            let lambda = f * (1.0 - f) * (si - s_bar);
            FeatureParams::with_y_var(lambda, sigma_sq, y_var)
        })
        .collect())
}

/// `n` masked view pairs.
pub fn sample_masked_views(spec: &MaskingSpec, n: usize, seed: u64) -> Result<SampleBatch, GenerativeError> {
    spec.validate()?;
    if n == 0 {
        return Err(DataError::EmptyBatch.into());
    }
    let basis = spec.basis();
    sample_masked_views_in(spec, &basis, n, seed)
}

/// Rows generated per independent random chunk.
pub const MASK_CHUNK_ROWS: usize = 4096;

struct MaskSampler<'a> {
    spec: &'a MaskingSpec,
    active_sd: Vec<f64>,
    b_active_t: DMatrix<f64>,
    seed: u64,
}

impl<'a> MaskSampler<'a> {
    fn new(spec: &'a MaskingSpec, basis: &DMatrix<f64>, seed: u64) -> Result<Self, GenerativeError> {
        spec.validate()?;
        let d = spec.d;
        if basis.shape() != (d, d) {
            return invalid("basis must be d x d");
        }
        let active: Vec<usize> = (0..d).filter(|&k| spec.coeff_vars[k] > 0.0).collect();
        Ok(Self {
            spec,
            active_sd: active.iter().map(|&k| spec.coeff_vars[k].sqrt()).collect(),
            b_active_t: basis.select_columns(&active).transpose(),
            seed,
        })
    }

    fn chunks(n: usize) -> impl Iterator<Item = (usize, usize)> {
        (0..n.div_ceil(MASK_CHUNK_ROWS)).map(move |c| (c, MASK_CHUNK_ROWS.min(n - c * MASK_CHUNK_ROWS)))
    }

    /// Chunk `c` draws from its own sub-streams, so chunks can be generated
    /// in any order.
    fn chunk(&self, c: usize, rows: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let sub = |stream: u64| stream_rng(self.seed, (stream << 32) | c as u64);
        let mut lat_rng = sub(streams::LATENTS);
        let s = DMatrix::from_fn(rows, self.active_sd.len(), |_, k| {
            let g: f64 = lat_rng.sample(StandardNormal);
            g * self.active_sd[k]
        });
        let mut z = s * &self.b_active_t;
        let eta = self.spec.noise_var.sqrt();
        if eta > 0.0 {
            let mut noise_rng = sub(streams::NOISE);
            for v in z.iter_mut() {
                let g: f64 = noise_rng.sample(StandardNormal);
                *v += eta * g;
            }
        }
        let mut mask_rng = sub(streams::MASKS);
        let mut y = DMatrix::<f64>::zeros(rows, self.spec.d);
        for (zv, yv) in z.iter_mut().zip(y.iter_mut()) {
            if mask_rng.random::<f64>() >= self.spec.f {
                *yv = *zv;
                *zv = 0.0;
            }
        }
        (z, y)
    }
}

/// As [`sample_masked_views`] with a precomputed basis.
pub fn sample_masked_views_in(spec: &MaskingSpec, basis: &DMatrix<f64>, n: usize, seed: u64) -> Result<SampleBatch, GenerativeError> {
    if n == 0 {
        return Err(DataError::EmptyBatch.into());
    }
    let sampler = MaskSampler::new(spec, basis, seed)?;
    let mut x = DMatrix::<f64>::zeros(n, spec.d);
    let mut y = DMatrix::<f64>::zeros(n, spec.d);
    for (c, rows) in MaskSampler::chunks(n) {
        let (cx, cy) = sampler.chunk(c, rows);
        x.rows_mut(c * MASK_CHUNK_ROWS, rows).copy_from(&cx);
        y.rows_mut(c * MASK_CHUNK_ROWS, rows).copy_from(&cy);
    }
    Ok(SampleBatch::new(x, y)?)
}

/// Empirical covariances of `n` masked pairs without materialising them;
/// equal (up to summation order) to [`empirical_covariances`] of
/// [`sample_masked_views_in`] with the same arguments.
pub fn masked_view_covariances(spec: &MaskingSpec, basis: &DMatrix<f64>, n: usize, seed: u64) -> Result<CovarianceEstimate, GenerativeError> {
    if n < 2 {
        return invalid("need at least two samples");
    }
    let sampler = MaskSampler::new(spec, basis, seed)?;
    let parts: Vec<(DMatrix<f64>, DMatrix<f64>)> = MaskSampler::chunks(n)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(c, rows)| {
            let (x, y) = sampler.chunk(c, rows);
            let xt = x.transpose();
            (&xt * &x, xt * y)
        })
        .collect();
    let d = spec.d;
    let (mut xx, mut xy) = (DMatrix::<f64>::zeros(d, d), DMatrix::<f64>::zeros(d, d));
    for (a, b) in &parts {
        xx += a;
        xy += b;
    }
    let nf = n as f64;
    Ok(CovarianceEstimate { xx: xx / nf, xy: xy / nf, n })
}

/// Streaming [`projected_params`] of `n` masked pairs along the columns
/// of `dirs`.
pub fn masked_view_projections(spec: &MaskingSpec, basis: &DMatrix<f64>, n: usize, seed: u64, dirs: &DMatrix<f64>) -> Result<Vec<(f64, f64)>, GenerativeError> {
    if n < 2 {
        return invalid("need at least two samples");
    }
    if dirs.nrows() != spec.d {
        return invalid("direction length must equal the data dimension");
    }
    let sampler = MaskSampler::new(spec, basis, seed)?;
    let mut unit = dirs.clone();
    for mut c in unit.column_iter_mut() {
        let norm = c.norm();
        if norm == 0.0 {
            return invalid("zero direction");
        }
        c /= norm;
    }
    let k = unit.ncols();
    let parts: Vec<Vec<(f64, f64)>> = MaskSampler::chunks(n)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(c, rows)| {
            let (x, y) = sampler.chunk(c, rows);
            let (px, py) = (x * &unit, y * &unit);
            (0..k).map(|j| (px.column(j).norm_squared(), px.column(j).dot(&py.column(j)))).collect()
        })
        .collect();
    let nf = n as f64;
    Ok((0..k).map(|j| {
        let (s, l) = parts.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p[j].0, acc.1 + p[j].1));
        (s / nf, l / nf)
    }).collect())
}

// ------------------------------------------------------------ temporal

/// AR(1)-modulated superposition of fixed images with disjoint supports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalSpec {
    /// `v^a`, each of length `d`.
    pub images: Vec<Vec<f64>>,
    /// `γ_a ∈ (0, 1)`.
    pub autocorr: Vec<f64>,
    /// `σ_a`, the noise standard deviation on image `a`'s support.
    pub noise_std: Vec<f64>,
    /// Number of recorded frames.
    pub t_len: usize,
    /// Discarded warm-up steps; `None` means `⌈10/(1 − max γ)⌉`.
    pub burn_in: Option<usize>,
}

impl TemporalSpec {
    /// Images on consecutive blocks of `block_len` coordinates, constant on
    /// their block with squared norm `norms_sq[a]`.
    pub fn blocks(norms_sq: &[f64], block_len: usize, autocorr: Vec<f64>, noise_std: Vec<f64>, t_len: usize) -> Self {
        let m = norms_sq.len();
        let d = m * block_len;
        let images = norms_sq
            .iter()
            .enumerate()
            .map(|(a, &n2)| {
                let mut v = vec![0.0; d];
                let val = (n2 / block_len as f64).sqrt();
                v[a * block_len..(a + 1) * block_len].iter_mut().for_each(|e| *e = val);
                v
            })
            .collect();
        Self { images, autocorr, noise_std, t_len, burn_in: None }
    }

    pub fn dim(&self) -> usize {
        self.images.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<(), GenerativeError> {
        let m = self.images.len();
        if m == 0 {
            return invalid("at least one image is required");
        }
        let d = self.dim();
        if d == 0 || self.images.iter().any(|v| v.len() != d) {
            return invalid("images must share a non-zero length");
        }
        if self.autocorr.len() != m || self.noise_std.len() != m {
            return invalid("autocorr and noise_std need one entry per image");
        }
        if let Some(g) = self.autocorr.iter().find(|g| !(**g > 0.0 && **g < 1.0)) {
            return invalid(format!("autocorrelation {g} must lie in (0, 1)"));
        }
        if let Some(s) = self.noise_std.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
            return invalid(format!("noise std {s} must be non-negative"));
        }
        if self.t_len < 2 {
            return invalid("sequence length must be at least 2");
        }
        for i in 0..d {
            if self.images.iter().filter(|v| v[i] != 0.0).count() > 1 {
                return invalid(format!("image supports overlap at coordinate {i}"));
            }
        }
        Ok(())
    }

    pub fn effective_burn_in(&self) -> usize {
        self.burn_in.unwrap_or_else(|| {
            let g = self.autocorr.iter().cloned().fold(0.0, f64::max);
            (10.0 / (1.0 - g)).ceil() as usize
        })
    }

    /// Noise standard deviation at each coordinate (zero off every support).
    pub fn coordinate_noise(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|i| self.images.iter().position(|v| v[i] != 0.0).map_or(0.0, |a| self.noise_std[a]))
            .collect()
    }

    /// Unit image directions `v^a/‖v^a‖`, as columns.
    pub fn directions(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, self.images.len(), |i, a| {
            let n = self.images[a].iter().map(|v| v * v).sum::<f64>().sqrt();
            self.images[a][i] / n
        })
    }
}

/// Simulated frames (`T × d`) and latents (`T × M`).
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalSequence {
    pub frames: DMatrix<f64>,
    pub latents: DMatrix<f64>,
}

pub fn simulate_temporal(spec: &TemporalSpec, seed: u64) -> Result<TemporalSequence, GenerativeError> {
    spec.validate()?;
    let m = spec.images.len();
    let d = spec.dim();
    let t_len = spec.t_len;
    let mut lat_rng = stream_rng(seed, streams::LATENTS);
    let mut u: Vec<f64> = (0..m).map(|_| lat_rng.sample(StandardNormal)).collect();
    let kick: Vec<f64> = spec.autocorr.iter().map(|g| (1.0 - g * g).sqrt()).collect();
    let mut step = |u: &mut [f64]| {
        for a in 0..m {
            let e: f64 = lat_rng.sample(StandardNormal);
            u[a] = spec.autocorr[a] * u[a] + kick[a] * e;
        }
    };
    for _ in 0..spec.effective_burn_in() {
        step(&mut u);
    }
    let mut latents = DMatrix::<f64>::zeros(t_len, m);
    for t in 0..t_len {
        if t > 0 {
            step(&mut u);
        }
        for a in 0..m {
            latents[(t, a)] = u[a];
        }
    }
    let images = DMatrix::from_fn(m, d, |a, i| spec.images[a][i]);
    let mut frames = &latents * images;
    let sd = spec.coordinate_noise();
    let mut noise_rng = stream_rng(seed, streams::NOISE);
    for i in 0..d {
        if sd[i] > 0.0 {
            for t in 0..t_len {
                let g: f64 = noise_rng.sample(StandardNormal);
                frames[(t, i)] += sd[i] * g;
            }
        }
    }
    Ok(TemporalSequence { frames, latents })
}

/// Rows `(z^t, z^{t+1})` for `t = 1 … T−1`.
pub fn consecutive_pairs(frames: &DMatrix<f64>) -> Result<SampleBatch, GenerativeError> {
    let t = frames.nrows();
    if t < 2 {
        return invalid("need at least two frames");
    }
    let x = frames.rows(0, t - 1).into_owned();
    let y = frames.rows(1, t - 1).into_owned();
    Ok(SampleBatch::new(x, y)?)
}

/// Per-image `(σ², λ)` along `v^a/‖v^a‖`: `σ² = σ_a² + ‖v^a‖²`,
/// `λ = γ_a‖v^a‖²`.
pub fn temporal_theoretical_params(spec: &TemporalSpec) -> Result<Vec<FeatureParams>, GenerativeError> {
    spec.validate()?;
    Ok(spec
        .images
        .iter()
        .zip(&spec.autocorr)
        .zip(&spec.noise_std)
        .map(|((v, &g), &s)| {
            let n2: f64 = v.iter().map(|e| e * e).sum();
            let sigma_sq = s * s + n2;
            FeatureParams::with_y_var(g * n2, sigma_sq, sigma_sq)
        })
        .collect())
}

// ----------------------------------------------------------- estimators

/// Uncentered empirical covariances `Σ̂ˣˣ = XᵀX/n`, `Σ̂ˣʸ = XᵀY/n`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub xx: DMatrix<f64>,
    pub xy: DMatrix<f64>,
    pub n: usize,
}

impl CovarianceEstimate {
    /// As training moments (`Σʸˣ = (Σ̂ˣʸ)ᵀ`).
    pub fn to_moments(&self) -> SecondMoments {
        SecondMoments { xx: self.xx.clone(), yx: self.xy.transpose(), yy: None }
    }
}

const CHUNK_ROWS: usize = 8192;

/// Accumulated in fixed row chunks (in parallel) and summed in chunk order,
/// so results are bit-identical for any thread count.
pub fn empirical_covariances(batch: &SampleBatch) -> Result<CovarianceEstimate, GenerativeError> {
    let n = batch.len();
    if n < 2 {
        return invalid("need at least two samples");
    }
    let d = batch.dim();
    let chunks: Vec<(DMatrix<f64>, DMatrix<f64>)> = (0..n.div_ceil(CHUNK_ROWS))
        .into_par_iter()
        .map(|c| {
            let start = c * CHUNK_ROWS;
            let len = CHUNK_ROWS.min(n - start);
            let x = batch.x.rows(start, len);
            let y = batch.y.rows(start, len);
            let xt = x.transpose();
            (&xt * x, xt * y)
        })
        .collect();
    let mut xx = DMatrix::<f64>::zeros(d, d);
    let mut xy = DMatrix::<f64>::zeros(d, d);
    for (a, b) in &chunks {
        xx += a;
        xy += b;
    }
    let nf = n as f64;
    Ok(CovarianceEstimate { xx: xx / nf, xy: xy / nf, n })
}

/// `(σ̂², λ̂)` along each column of `dirs` (normalised first), computed
/// from projected samples without forming full covariances.
pub fn projected_params(batch: &SampleBatch, dirs: &DMatrix<f64>) -> Result<Vec<(f64, f64)>, GenerativeError> {
    if dirs.nrows() != batch.dim() {
        return invalid("direction length must equal the data dimension");
    }
    if batch.len() < 2 {
        return invalid("need at least two samples");
    }
    let mut unit = dirs.clone();
    for mut c in unit.column_iter_mut() {
        let n = c.norm();
        if n == 0.0 {
            return invalid("zero direction");
        }
        c /= n;
    }
    let px = &batch.x * &unit;
    let py = &batch.y * &unit;
    let nf = batch.len() as f64;
    Ok((0..unit.ncols())
        .map(|k| (px.column(k).norm_squared() / nf, px.column(k).dot(&py.column(k)) / nf))
        .collect())
}

/// `(v̂ᵀΣ̂ˣˣv̂, v̂ᵀΣ̂ˣʸv̂)` for one direction.
pub fn directional_params(est: &CovarianceEstimate, dir: &[f64]) -> Result<(f64, f64), GenerativeError> {
    if dir.len() != est.xx.nrows() {
        return invalid("direction length must equal the data dimension");
    }
    let v = DVector::from_column_slice(dir);
    let n = v.norm();
    if n == 0.0 {
        return invalid("zero direction");
    }
    let v = v / n;
    Ok(((v.transpose() * &est.xx * &v)[(0, 0)], (v.transpose() * &est.xy * &v)[(0, 0)]))
}

/// Relative eigenvalue gap below which eigenvalues count as repeated.
pub const DEGENERACY_RTOL: f64 = 1e-8;

/// Orthonormal eigenbasis of `Σ̂ˣˣ` (eigenvalues descending), with every
/// degenerate block rotated to diagonalise the symmetrised `Σ̂ˣʸ` inside it.
pub fn joint_eigenbasis(est: &CovarianceEstimate) -> Result<DMatrix<f64>, GenerativeError> {
    let d = est.xx.nrows();
    if est.xx.shape() != (d, d) || est.xy.shape() != (d, d) {
        return invalid("covariances must be square and of equal size");
    }
    if est.xx.iter().chain(est.xy.iter()).any(|v| !v.is_finite()) {
        return Err(GenerativeError::Numeric("non-finite covariance entries".into()));
    }
    let sym = (&est.xx + est.xx.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 10_000)
        .ok_or_else(|| GenerativeError::Numeric("eigendecomposition did not converge".into()))?;
    let mut idx: Vec<usize> = (0..d).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let vals: Vec<f64> = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut q = eig.eigenvectors.select_columns(&idx);
    let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = DEGENERACY_RTOL * scale;
    let sxy = (&est.xy + est.xy.transpose()) * 0.5;
    let mut start = 0;
    while start < d {
        let mut end = start + 1;
        while end < d && (vals[end - 1] - vals[end]).abs() < tol {
            end += 1;
        }
        if end - start > 1 {
            let block = q.columns(start, end - start).into_owned();
            let proj = block.transpose() * &sxy * &block;
            let inner = SymmetricEigen::try_new(proj, f64::EPSILON, 10_000)
                .ok_or_else(|| GenerativeError::Numeric("eigendecomposition did not converge".into()))?;
            let mut order: Vec<usize> = (0..end - start).collect();
            order.sort_by(|&a, &b| inner.eigenvalues[b].total_cmp(&inner.eigenvalues[a]).then(a.cmp(&b)));
            let rot = inner.eigenvectors.select_columns(&order);
            q.columns_mut(start, end - start).copy_from(&(block * rot));
        }
        start = end;
    }
    Ok(q)
}

/// Mean squared off-diagonal entry of `QᵀΣ̂ˣʸQ` in the eigenbasis of
/// `Σ̂ˣˣ`; zero when the two are simultaneously diagonal.
pub fn diagonalizability_error(est: &CovarianceEstimate) -> Result<f64, GenerativeError> {
    let d = est.xx.nrows();
    if d < 2 {
        return Ok(0.0);
    }
    let q = joint_eigenbasis(est)?;
    let a = q.transpose() * &est.xy * &q;
    let mut sum = 0.0;
    for i in 0..d {
        for j in 0..d {
            if i != j {
                sum += a[(i, j)] * a[(i, j)];
            }
        }
    }
    Ok(sum / (d * (d - 1)) as f64)
}

/// `|QᵀΣ̂ˣʸQ|` in the joint eigenbasis, for heatmaps.
pub fn rotated_cross_covariance(est: &CovarianceEstimate) -> Result<DMatrix<f64>, GenerativeError> {
    let q = joint_eigenbasis(est)?;
    Ok((q.transpose() * &est.xy * &q).abs())
}
