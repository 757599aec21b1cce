//! Deep linear networks trained on the JEPA or MAE objective.
//!
//! The encoder is `W̄ = W^L ⋯ W^1` and the decoder (predictor) is `V`. With
//! `Σˣˣ = E[xxᵀ]` and `Σʸˣ = E[yxᵀ]` the losses are
//!
//! - MAE:  `½E‖VW̄x − y‖²`
//! - JEPA: `½E‖VW̄x − SG(W̄)y‖²`
//!
//! and both gradients depend on the data only through
//! `M = VW̄Σˣˣ − T`, with `T = W̄Σʸˣ` (JEPA) or `T = Σʸˣ` (MAE):
//! `∇V = MW̄ᵀ`, `∇W^a = (W^L⋯W^{a+1})ᵀ VᵀM (W^{a−1}⋯W^1)ᵀ`.
//! Minibatch SGD uses the same expressions on the empirical moments of the
//! batch.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{sample_with, validate_spec, DataError, GaussianDataSpec, SampleBatch, SecondMoments, Violation};
use crate::linalg::{chain_product, column_norms, gaussian_matrix, haar_orthogonal};
use crate::objective::Objective;
use crate::rng::{stream_rng, streams};

/// Any weight entry above this magnitude counts as divergence.
pub const DIVERGENCE_THRESHOLD: f64 = 1e8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("training diverged at step {step}: {reason}")]
    Divergence { step: usize, reason: String },
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Encoder stack plus decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepLinearModel {
    /// `W^1 … W^L`, applied in that order.
    pub layers: Vec<DMatrix<f64>>,
    pub decoder: DMatrix<f64>,
    pub objective: Objective,
}

impl DeepLinearModel {
    pub fn new(layers: Vec<DMatrix<f64>>, decoder: DMatrix<f64>, objective: Objective) -> Result<Self, NetworkError> {
        if layers.is_empty() {
            return Err(NetworkError::InvalidInput("at least one encoder layer is required".into()));
        }
        let d = decoder.nrows();
        for m in layers.iter().chain(std::iter::once(&decoder)) {
            if m.nrows() != d || m.ncols() != d {
                return Err(NetworkError::DimMismatch { expected: d, got: m.nrows().max(m.ncols()) });
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(NetworkError::InvalidInput("weights must be finite".into()));
            }
        }
        Ok(Self { layers, decoder, objective })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn dim(&self) -> usize {
        self.decoder.nrows()
    }

    /// End-to-end encoder `W̄ = W^L ⋯ W^1`.
    pub fn encoder(&self) -> DMatrix<f64> {
        chain_product(&self.layers, self.dim())
    }

    fn max_abs_entry(&self) -> f64 {
        self.layers
            .iter()
            .chain(std::iter::once(&self.decoder))
            .flat_map(|m| m.iter())
            .fold(0.0f64, |acc, v| if v.is_nan() { f64::NAN } else { acc.max(v.abs()) })
    }
}

fn check_init(d: usize, depth: usize) -> Result<(), NetworkError> {
    if d == 0 || depth == 0 {
        return Err(NetworkError::InvalidInput("d and L must be at least 1".into()));
    }
    Ok(())
}

/// Scaled-orthogonal initialisation: `W^a = ε^{1/L}U^a` with Haar `U^a`;
/// the JEPA decoder is `ε^{1/L}I`, the MAE decoder `ε^{1/L}(U^L⋯U^1)ᵀ`.
/// All feature projections start at `ε` and the weights are balanced.
pub fn init_structured(d: usize, depth: usize, epsilon: f64, objective: Objective, seed: u64) -> Result<DeepLinearModel, NetworkError> {
    check_init(d, depth)?;
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(NetworkError::InvalidInput(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    let mut rng = stream_rng(seed, streams::INIT);
    let s = epsilon.powf(1.0 / depth as f64);
    let us: Vec<DMatrix<f64>> = (0..depth).map(|_| haar_orthogonal(d, &mut rng)).collect();
    let decoder = match objective {
        Objective::Jepa => DMatrix::identity(d, d) * s,
        Objective::Mae => chain_product(&us, d).transpose() * s,
    };
    let layers = us.into_iter().map(|u| u * s).collect();
    Ok(DeepLinearModel { layers, decoder, objective })
}

/// iid `N(0, (scale/√d)²)` entries in every layer and the decoder.
pub fn init_gaussian(d: usize, depth: usize, scale: f64, objective: Objective, seed: u64) -> Result<DeepLinearModel, NetworkError> {
    check_init(d, depth)?;
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(NetworkError::InvalidInput(format!("scale must be non-negative, got {scale}")));
    }
    let mut rng = stream_rng(seed, streams::INIT);
    let std = scale / (d as f64).sqrt();
    let layers = (0..depth).map(|_| gaussian_matrix(d, d, std, &mut rng)).collect();
    let decoder = gaussian_matrix(d, d, std, &mut rng);
    Ok(DeepLinearModel { layers, decoder, objective })
}

/// Mean over rows of `½‖VW̄x − target‖²`, target `y` (MAE) or `W̄y` (JEPA).
pub fn loss(model: &DeepLinearModel, batch: &SampleBatch) -> Result<f64, NetworkError> {
    let d = model.dim();
    if batch.dim() != d {
        return Err(NetworkError::DimMismatch { expected: d, got: batch.dim() });
    }
    if batch.is_empty() {
        return Err(NetworkError::InvalidInput("empty batch".into()));
    }
    let enc = model.encoder();
    // rows: predictions (VW̄x)ᵀ = xᵀW̄ᵀVᵀ
    let pred = &batch.x * (&model.decoder * &enc).transpose();
    let target = match model.objective {
        Objective::Mae => batch.y.clone(),
        Objective::Jepa => &batch.y * enc.transpose(),
    };
    Ok(0.5 * (pred - target).norm_squared() / batch.len() as f64)
}

/// Loss under the given moments. Without `Σʸʸ` the target-only constant is
/// dropped.
pub fn moment_loss(model: &DeepLinearModel, m: &SecondMoments) -> Result<f64, NetworkError> {
    check_moments(model, m)?;
    let enc = model.encoder();
    let p = &model.decoder * &enc;
    let quad = (&p * &m.xx * p.transpose()).trace();
    let (cross, target) = match model.objective {
        Objective::Mae => ((&p * m.yx.transpose()).trace(), m.yy.as_ref().map(|yy| yy.trace())),
        Objective::Jepa => (
            (&p * m.yx.transpose() * enc.transpose()).trace(),
            m.yy.as_ref().map(|yy| (&enc * yy * enc.transpose()).trace()),
        ),
    };
    Ok(0.5 * quad - cross + 0.5 * target.unwrap_or(0.0))
}

/// Exact population loss of a diagonal spec.
pub fn population_loss(model: &DeepLinearModel, spec: &GaussianDataSpec) -> Result<f64, NetworkError> {
    moment_loss(model, &SecondMoments::population(spec))
}

fn check_moments(model: &DeepLinearModel, m: &SecondMoments) -> Result<(), NetworkError> {
    let d = model.dim();
    for mat in [&m.xx, &m.yx].into_iter().chain(m.yy.as_ref()) {
        if mat.nrows() != d || mat.ncols() != d {
            return Err(NetworkError::DimMismatch { expected: d, got: mat.nrows() });
        }
    }
    Ok(())
}

/// Per-layer and decoder gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<DMatrix<f64>>,
    pub decoder: DMatrix<f64>,
}

impl Gradients {
    pub fn norm(&self) -> f64 {
        (self.layers.iter().map(|g| g.norm_squared()).sum::<f64>() + self.decoder.norm_squared()).sqrt()
    }
}

/// Population gradients for diagonal `Σˣˣ`, `Σʸˣ`.
pub fn analytic_gradients(model: &DeepLinearModel, sigma_xx: &[f64], sigma_yx: &[f64]) -> Result<Gradients, NetworkError> {
    let d = model.dim();
    for v in [sigma_xx, sigma_yx] {
        if v.len() != d {
            return Err(NetworkError::DimMismatch { expected: d, got: v.len() });
        }
    }
    Ok(moment_gradients(model, &SecondMoments::from_diagonals(sigma_xx, sigma_yx)))
}

/// Gradients for arbitrary (not necessarily diagonal) moments. StopGrad
/// means the JEPA target `W̄Σʸˣ` is treated as a constant.
pub fn moment_gradients(model: &DeepLinearModel, m: &SecondMoments) -> Gradients {
    let d = model.dim();
    let depth = model.depth();
    // prefix[a] = W^a ⋯ W^1 (prefix[0] = I)
    let mut prefix = Vec::with_capacity(depth + 1);
    prefix.push(DMatrix::<f64>::identity(d, d));
    for w in &model.layers {
        let next = w * prefix.last().unwrap();
        prefix.push(next);
    }
    let enc = &prefix[depth];
    let target = match model.objective {
        Objective::Jepa => enc * &m.yx,
        Objective::Mae => m.yx.clone(),
    };
    let resid = &model.decoder * enc * &m.xx - target;
    let decoder = &resid * enc.transpose();
    // g = (W^L ⋯ W^{a+1})ᵀ Vᵀ M, built from the top down
    let mut layers = vec![DMatrix::<f64>::zeros(d, d); depth];
    let mut g = model.decoder.transpose() * &resid;
    for a in (0..depth).rev() {
        layers[a] = &g * prefix[a].transpose();
        if a > 0 {
            g = model.layers[a].transpose() * &g;
        }
    }
    Gradients { layers, decoder }
}

/// `‖W̄eᵢ‖` for every coordinate `i`.
pub fn feature_projections(model: &DeepLinearModel) -> Vec<f64> {
    column_norms(&model.encoder())
}

/// `max_a ‖W^{a+1,ᵀ}W^{a+1} − W^a W^{a,ᵀ}‖_F` over `a = 1…L`, with
/// `W^{L+1} = V`.
pub fn balancedness_error(model: &DeepLinearModel) -> f64 {
    let depth = model.depth();
    (0..depth)
        .map(|a| {
            let upper = if a + 1 < depth { &model.layers[a + 1] } else { &model.decoder };
            let lower = &model.layers[a];
            (upper.transpose() * upper - lower * lower.transpose()).norm()
        })
        .fold(0.0, f64::max)
}

/// Balanced but unaligned initialisation: `W^a = U^a S U^{a−1,ᵀ}` and
/// `V = U^{L+1} S U^{L,ᵀ}` with Haar `U^0 … U^{L+1}` and a shared diagonal
/// `S` whose entries are uniform on `[scale/2, 3·scale/2]`.
pub fn init_balanced(d: usize, depth: usize, scale: f64, objective: Objective, seed: u64) -> Result<DeepLinearModel, NetworkError> {
    check_init(d, depth)?;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(NetworkError::InvalidInput(format!("scale must be positive, got {scale}")));
    }
    let mut rng = stream_rng(seed, streams::INIT);
    let s = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(d, |_, _| scale * (0.5 + rng.random::<f64>())));
    let us: Vec<DMatrix<f64>> = (0..depth + 2).map(|_| haar_orthogonal(d, &mut rng)).collect();
    let factor = |a: usize| &us[a] * &s * us[a - 1].transpose();
    let layers = (1..=depth).map(factor).collect();
    let decoder = factor(depth + 1);
    Ok(DeepLinearModel { layers, decoder, objective })
}

/// Training signal.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainData {
    /// Full-batch gradient descent on the population moments.
    Population(GaussianDataSpec),
    /// Full-batch gradient descent on arbitrary fixed moments.
    Moments(SecondMoments),
    /// Minibatch SGD on fresh joint-Gaussian samples every step.
    Sampled { spec: GaussianDataSpec, batch_size: usize, seed: u64 },
}

/// Recorded training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub steps: Vec<usize>,
    /// `step · lr`.
    pub step_times: Vec<f64>,
    /// One row per record, one column per feature.
    pub projections: Vec<Vec<f64>>,
    pub loss: Vec<f64>,
    pub balancedness: Vec<f64>,
    pub lr: f64,
    pub depth: usize,
}

impl TrainTrace {
    /// Times on the reduced-ODE clock, `L · step · lr`.
    pub fn ode_times(&self) -> Vec<f64> {
        self.step_times.iter().map(|t| t * self.depth as f64).collect()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn last_projections(&self) -> &[f64] {
        self.projections.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Projection history of feature `i`.
    pub fn feature(&self, i: usize) -> Vec<f64> {
        self.projections.iter().map(|r| r[i]).collect()
    }

    /// Same trace restricted to the given features, in the given order.
    pub fn select_features(&self, features: &[usize]) -> TrainTrace {
        TrainTrace {
            projections: self.projections.iter().map(|r| features.iter().map(|&i| r[i]).collect()).collect(),
            ..self.clone()
        }
    }
}

fn record(trace: &mut TrainTrace, model: &DeepLinearModel, step: usize, loss: f64) -> Result<(), NetworkError> {
    let proj = feature_projections(model);
    let bal = balancedness_error(model);
    if !loss.is_finite() || proj.iter().any(|v| !v.is_finite()) || !bal.is_finite() {
        return Err(NetworkError::Divergence { step, reason: "non-finite loss or projection".into() });
    }
    trace.steps.push(step);
    trace.step_times.push(step as f64 * trace.lr);
    trace.projections.push(proj);
    trace.loss.push(loss);
    trace.balancedness.push(bal);
    Ok(())
}

fn sampling_spec_ok(spec: &GaussianDataSpec) -> Result<(), NetworkError> {
    if let Some(v) = validate_spec(spec, true).into_iter().find(Violation::blocks_sampling) {
        return Err(DataError::Infeasible(v).into());
    }
    Ok(())
}

/// Plain (S)GD with simultaneous updates of every layer and the decoder.
/// Records at step 0, every `record_every` steps and at the final step.
/// The recorded loss is the population loss when a spec is available.
pub fn train(model: &mut DeepLinearModel, data: &TrainData, lr: f64, steps: usize, record_every: usize) -> Result<TrainTrace, NetworkError> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(NetworkError::InvalidInput(format!("lr must be positive, got {lr}")));
    }
    let record_every = record_every.max(1);
    let d = model.dim();
    let (fixed, eval, sampler) = match data {
        TrainData::Population(spec) => {
            let m = SecondMoments::population(spec);
            (Some(m.clone()), m, None)
        }
        TrainData::Moments(m) => (Some(m.clone()), m.clone(), None),
        TrainData::Sampled { spec, batch_size, seed } => {
            sampling_spec_ok(spec)?;
            if *batch_size == 0 {
                return Err(DataError::EmptyBatch.into());
            }
            (None, SecondMoments::population(spec), Some((spec, *batch_size, stream_rng(*seed, streams::MINIBATCH))))
        }
    };
    check_moments(model, &eval)?;
    if eval.dim() != d {
        return Err(NetworkError::DimMismatch { expected: d, got: eval.dim() });
    }
    let mut sampler = sampler;
    let mut trace = TrainTrace {
        steps: vec![],
        step_times: vec![],
        projections: vec![],
        loss: vec![],
        balancedness: vec![],
        lr,
        depth: model.depth(),
    };
    record(&mut trace, model, 0, moment_loss(model, &eval)?)?;
    for step in 1..=steps {
        let grads = match (&fixed, &mut sampler) {
            (Some(m), _) => moment_gradients(model, m),
            (None, Some((spec, n, rng))) => {
                let batch = sample_with(spec, *n, rng);
                moment_gradients(model, &SecondMoments::cross_from_batch(&batch))
            }
            (None, None) => unreachable!(),
        };
        for (w, g) in model.layers.iter_mut().zip(&grads.layers) {
            *w -= g * lr;
        }
        model.decoder -= &grads.decoder * lr;
        let peak = model.max_abs_entry();
        if !(peak <= DIVERGENCE_THRESHOLD) {
            return Err(NetworkError::Divergence { step, reason: format!("weight magnitude {peak:e} exceeds {DIVERGENCE_THRESHOLD:e}") });
        }
        if step % record_every == 0 || step == steps {
            record(&mut trace, model, step, moment_loss(model, &eval)?)?;
        }
    }
    Ok(trace)
}

/// Per-feature crossing times and the induced order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningOrder {
    /// Feature indices, earliest learned first; unlearned features last.
    pub order: Vec<usize>,
    /// First time the projection reaches `p · final`, `None` if never.
    pub crossing_times: Vec<Option<f64>>,
}

/// Order in which features reach `p` times their `final` value.
pub fn learning_order(trace: &TrainTrace, p: f64, final_values: &[f64]) -> Result<LearningOrder, NetworkError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(NetworkError::InvalidInput(format!("p must lie in (0, 1), got {p}")));
    }
    let d = final_values.len();
    if trace.projections.iter().any(|r| r.len() != d) {
        return Err(NetworkError::DimMismatch { expected: d, got: trace.last_projections().len() });
    }
    let crossing_times: Vec<Option<f64>> = (0..d)
        .map(|i| {
            let thr = p * final_values[i];
            let k = trace.projections.iter().position(|r| r[i] >= thr)?;
            if k == 0 {
                return Some(trace.step_times[0]);
            }
            let (t0, t1) = (trace.step_times[k - 1], trace.step_times[k]);
            let (v0, v1) = (trace.projections[k - 1][i], trace.projections[k][i]);
            Some(t0 + (t1 - t0) * (thr - v0) / (v1 - v0))
        })
        .collect();
    let last = trace.last_projections();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| match (crossing_times[a], crossing_times[b]) {
        (Some(x), Some(y)) => x.total_cmp(&y).then(a.cmp(&b)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => {
            let (la, lb) = (last.get(a).copied().unwrap_or(0.0), last.get(b).copied().unwrap_or(0.0));
            lb.total_cmp(&la).then(a.cmp(&b))
        }
    });
    Ok(LearningOrder { order, crossing_times })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closed_form::mae_l1_solution;
    use crate::data::{sample_gaussian_pairs, FeatureParams};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(v))
    }

    #[test]
    fn structured_init_properties() {
        for o in Objective::ALL {
            for depth in [1usize, 2, 5] {
                let d = 6;
                let eps = 1e-2;
                let m = init_structured(d, depth, eps, o, 3).unwrap();
                let s2 = eps.powf(2.0 / depth as f64);
                for w in &m.layers {
                    let e = (w.tr_mul(w) - DMatrix::<f64>::identity(d, d) * s2).norm();
                    assert!(e <= 1e-10 * d as f64);
                }
                assert!(balancedness_error(&m) <= 1e-10);
                for v in feature_projections(&m) {
                    assert!((v - eps).abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn balanced_init_is_balanced_and_unaligned() {
        for o in Objective::ALL {
            let m = init_balanced(4, 3, 0.4, o, 5).unwrap();
            assert!(balancedness_error(&m) <= 1e-12);
            let enc = m.encoder();
            let off: f64 = (0..4).flat_map(|i| (0..4).map(move |j| (i, j))).filter(|(i, j)| i != j).map(|(i, j)| enc[(i, j)].abs()).sum();
            assert!(off > 1e-3);
        }
        assert!(init_balanced(4, 2, 0.0, Objective::Mae, 1).is_err());
    }

    #[test]
    fn structured_init_stays_balanced_under_gd() {
        // aligned, equal singular values: the O(lr²) drift term cancels exactly
        let spec = GaussianDataSpec::from_lambda_rho(&[(20.0, 1.0), (16.0, 0.9), (24.0, 0.8)]);
        let mut m = init_structured(3, 2, 0.1, Objective::Mae, 1).unwrap();
        train(&mut m, &TrainData::Population(spec), 1e-3, 2000, 2000).unwrap();
        assert!(balancedness_error(&m) < 1e-12);
    }

    #[test]
    fn balancedness_drift_scales_with_lr() {
        let spec = GaussianDataSpec::from_lambda_rho(&[(20.0, 1.0), (16.0, 0.9), (24.0, 0.8)]);
        let drift = |lr: f64| {
            let mut m = init_balanced(3, 2, 0.3, Objective::Mae, 1).unwrap();
            train(&mut m, &TrainData::Population(spec.clone()), lr, 4000, 4000).unwrap();
            balancedness_error(&m)
        };
        let (a, b) = (drift(1e-3), drift(5e-4));
        assert!(a > 1e-8);
        assert!((a / b - 2.0).abs() < 0.4, "{a} {b}");
    }

    #[test]
    fn gaussian_init_moments() {
        let d = 100;
        let m = init_gaussian(d, 2, 0.8, Objective::Mae, 9).unwrap();
        let want = 0.64 / d as f64;
        let n = (d * d) as f64;
        for w in m.layers.iter().chain(std::iter::once(&m.decoder)) {
            let var = w.iter().map(|v| v * v).sum::<f64>() / n;
            // Var of a squared normal is 2σ⁴
            let se = (2.0 * want * want / n).sqrt();
            assert!((var - want).abs() < 5.0 * se, "{var} vs {want}");
        }
        assert_eq!(m, init_gaussian(d, 2, 0.8, Objective::Mae, 9).unwrap());
        let z = init_gaussian(4, 3, 0.0, Objective::Jepa, 1).unwrap();
        assert!(z.layers.iter().all(|w| w.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn zero_model_stays_at_zero() {
        let mut z = init_gaussian(3, 2, 0.0, Objective::Mae, 1).unwrap();
        let spec = GaussianDataSpec::from_lambda_rho(&[(1.0, 0.5), (2.0, 0.9), (0.5, 0.3)]);
        let g = analytic_gradients(&z, &[2.0, 2.0 / 0.9, 0.5 / 0.3], &[1.0, 2.0, 0.5]).unwrap();
        assert_eq!(g.norm(), 0.0);
        let tr = train(&mut z, &TrainData::Population(spec), 0.1, 10, 1).unwrap();
        assert!(tr.last_projections().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn loss_examples() {
        let spec = GaussianDataSpec::new(vec![FeatureParams::with_y_var(0.5, 1.0, 1.0); 2]);
        let batch = sample_gaussian_pairs(&spec, 1000, 4).unwrap();
        let zero = init_gaussian(2, 2, 0.0, Objective::Mae, 0).unwrap();
        let want = 0.5 * batch.y.norm_squared() / 1000.0;
        assert_relative_eq!(loss(&zero, &batch).unwrap(), want, max_relative = 1e-14);

        let same = SampleBatch::new(batch.x.clone(), batch.x.clone()).unwrap();
        let mut m = init_gaussian(2, 3, 1.0, Objective::Jepa, 5).unwrap();
        m.decoder = DMatrix::identity(2, 2);
        assert!(loss(&m, &same).unwrap() < 1e-20);

        assert!(loss(&m, &sample_gaussian_pairs(&GaussianDataSpec::from_lambda_rho(&[(1.0, 1.0)]), 3, 0).unwrap()).is_err());
    }

    #[test]
    fn optimal_scalar_loss_converges() {
        // VW̄ = ρ on d = 1: loss → ½(y_var − λ²/σ²)
        let p = FeatureParams::with_y_var(0.6, 1.5, 0.9);
        let spec = GaussianDataSpec::new(vec![p]);
        let rho = p.lambda / p.sigma_sq;
        let m = DeepLinearModel::new(vec![DMatrix::from_element(1, 1, 1.0)], DMatrix::from_element(1, 1, rho), Objective::Mae).unwrap();
        let want = 0.5 * (p.y_var - p.lambda * p.lambda / p.sigma_sq);
        assert_relative_eq!(population_loss(&m, &spec).unwrap(), want, max_relative = 1e-14);
        let n = 1_000_000;
        let b = sample_gaussian_pairs(&spec, n, 8).unwrap();
        // residual y − ρx has variance 2·want, so its half-square has sd want·√2
        let se = want * 2f64.sqrt() / (n as f64).sqrt();
        assert!((loss(&m, &b).unwrap() - want).abs() < 5.0 * se);
    }

    #[test]
    fn moment_loss_matches_batch_loss() {
        let spec = GaussianDataSpec::from_lambda_rho(&[(0.7, 0.5), (0.2, 0.8), (0.4, 0.3)]);
        let b = sample_gaussian_pairs(&spec, 500, 2).unwrap();
        let mom = SecondMoments::from_batch(&b);
        for o in Objective::ALL {
            let m = init_gaussian(3, 3, 1.0, o, 11).unwrap();
            assert_relative_eq!(moment_loss(&m, &mom).unwrap(), loss(&m, &b).unwrap(), max_relative = 1e-10);
        }
    }

    #[test]
    fn mae_decoder_gradient_vanishes_at_optimum() {
        let sxx = [2.0, 1.0, 0.5];
        let syx = [1.0, 0.7, 0.4];
        let enc = init_gaussian(3, 2, 1.0, Objective::Mae, 4).unwrap();
        let w = enc.encoder();
        // V W̄ = Σʸˣ(Σˣˣ)⁻¹
        let target = diag(&[0.5, 0.7, 0.8]);
        let v = target * w.clone().try_inverse().unwrap();
        let m = DeepLinearModel::new(enc.layers.clone(), v, Objective::Mae).unwrap();
        let g = analytic_gradients(&m, &sxx, &syx).unwrap();
        assert!(g.decoder.norm() < 1e-12);
        assert!(g.layers.iter().all(|x| x.norm() < 1e-12));
    }

    /// `½ mean‖V W̄ x − c‖²` with constant targets `c`.
    fn surrogate(layers: &[DMatrix<f64>], v: &DMatrix<f64>, x: &DMatrix<f64>, c: &DMatrix<f64>) -> f64 {
        let enc = chain_product(layers, v.nrows());
        0.5 * (x * (v * enc).transpose() - c).norm_squared() / x.nrows() as f64
    }

    fn directional_fd(model: &DeepLinearModel, batch: &SampleBatch, dir: &Gradients, h: f64) -> f64 {
        let targets = match model.objective {
            Objective::Mae => batch.y.clone(),
            Objective::Jepa => &batch.y * model.encoder().transpose(),
        };
        let shift = |s: f64| {
            let layers: Vec<_> = model.layers.iter().zip(&dir.layers).map(|(w, g)| w + g * s).collect();
            let v = &model.decoder + &dir.decoder * s;
            surrogate(&layers, &v, &batch.x, &targets)
        };
        (shift(h) - shift(-h)) / (2.0 * h)
    }

    fn dot(a: &Gradients, b: &Gradients) -> f64 {
        a.layers.iter().zip(&b.layers).map(|(x, y)| x.dot(y)).sum::<f64>() + a.decoder.dot(&b.decoder)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let spec = GaussianDataSpec::from_lambda_rho(&[(0.8, 0.9), (0.5, 0.4), (0.3, 0.7)]);
        let n = 1_000_000;
        let batch = sample_gaussian_pairs(&spec, n, 21).unwrap();
        let mom = SecondMoments::from_batch(&batch);
        let (sxx, syx) = crate::data::population_covariances(&spec);
        for o in Objective::ALL {
            let model = init_gaussian(3, 3, 1.2, o, 17).unwrap();
            let mut rng = stream_rng(5, 0);
            let dir = Gradients {
                layers: (0..3).map(|_| gaussian_matrix(3, 3, 1.0, &mut rng)).collect(),
                decoder: gaussian_matrix(3, 3, 1.0, &mut rng),
            };
            let fd = directional_fd(&model, &batch, &dir, 1e-5);
            // gradient of this very batch's (StopGrad surrogate) loss
            let exact = dot(&moment_gradients(&model, &mom), &dir);
            assert!((fd - exact).abs() <= 1e-3 * exact.abs(), "{o}: {fd} vs {exact}");
            // population gradient, Monte-Carlo agreement
            let pop = dot(&analytic_gradients(&model, &sxx, &syx).unwrap(), &dir);
            assert!((fd - pop).abs() <= 2e-2 * pop.abs(), "{o}: {fd} vs {pop}");
        }
    }

    #[test]
    fn stopgrad_target_branch_is_constant() {
        // JEPA gradients equal those of ½E‖VW̄x − c‖² with c = W̄y frozen:
        // perturbing the weights inside the target changes nothing.
        let spec = GaussianDataSpec::from_lambda_rho(&[(0.8, 0.9), (0.5, 0.4)]);
        let batch = sample_gaussian_pairs(&spec, 4000, 2).unwrap();
        let model = init_gaussian(2, 2, 1.0, Objective::Jepa, 3).unwrap();
        let mom = SecondMoments::from_batch(&batch);
        let g = moment_gradients(&model, &mom);
        let c = &batch.y * model.encoder().transpose();
        let h = 1e-6;
        for a in 0..2 {
            for (i, j) in [(0, 0), (0, 1), (1, 0)] {
                let mut plus = model.layers.clone();
                let mut minus = model.layers.clone();
                plus[a][(i, j)] += h;
                minus[a][(i, j)] -= h;
                let fd = (surrogate(&plus, &model.decoder, &batch.x, &c) - surrogate(&minus, &model.decoder, &batch.x, &c)) / (2.0 * h);
                assert!((fd - g.layers[a][(i, j)]).abs() <= 1e-6 * g.layers[a][(i, j)].abs().max(1.0));
            }
        }
    }

    #[test]
    fn scalar_mae_tracks_closed_form() {
        let spec = GaussianDataSpec::from_lambda_rho(&[(1.0, 1.0)]);
        let mut m = init_structured(1, 1, 1e-2, Objective::Mae, 0).unwrap();
        let lr = 1e-3;
        let tr = train(&mut m, &TrainData::Population(spec), lr, 8000, 10).unwrap();
        let worst = tr
            .ode_times()
            .iter()
            .zip(tr.feature(0))
            .map(|(&t, w)| (w - mae_l1_solution(t, 1.0, 1.0, 1e-2).unwrap()).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-2, "{worst}");
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let spec = GaussianDataSpec::from_lambda_rho(&[(1.0, 1.0)]);
        let mut m = init_structured(1, 1, 1e-2, Objective::Mae, 0).unwrap();
        let err = train(&mut m, &TrainData::Population(spec), 1e3, 50, 1).unwrap_err();
        match err {
            NetworkError::Divergence { step, .. } => assert!(step <= 10, "{step}"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn zero_steps_records_initial_state() {
        let spec = GaussianDataSpec::from_lambda_rho(&[(1.0, 1.0), (0.5, 0.5)]);
        let mut m = init_structured(2, 2, 1e-2, Objective::Jepa, 0).unwrap();
        let tr = train(&mut m, &TrainData::Population(spec), 1e-2, 0, 5).unwrap();
        assert_eq!(tr.len(), 1);
        assert_eq!(tr.steps, vec![0]);
    }

    #[test]
    fn projections_examples() {
        let m = DeepLinearModel::new(
            vec![diag(&[1.0, 1.0, 3.0]), diag(&[1.0, 2.0, 1.0])],
            DMatrix::identity(3, 3),
            Objective::Mae,
        )
        .unwrap();
        assert_eq!(feature_projections(&m), vec![1.0, 2.0, 3.0]);

        let g = init_gaussian(5, 4, 1.0, Objective::Jepa, 8).unwrap();
        // naive triple-loop product W⁴W³W²W¹
        let mut p = vec![vec![0.0; 5]; 5];
        for (i, row) in p.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        for w in &g.layers {
            let mut q = vec![vec![0.0; 5]; 5];
            for i in 0..5 {
                for j in 0..5 {
                    for k in 0..5 {
                        q[i][j] += w[(i, k)] * p[k][j];
                    }
                }
            }
            p = q;
        }
        let got = feature_projections(&g);
        for j in 0..5 {
            let want = (0..5).map(|i| p[i][j] * p[i][j]).sum::<f64>().sqrt();
            assert!((got[j] - want).abs() <= 1e-12 * want.max(1.0));
        }
    }

    #[test]
    fn balancedness_hand_example() {
        let m = DeepLinearModel::new(
            vec![DMatrix::identity(2, 2), DMatrix::identity(2, 2) * 2.0],
            DMatrix::identity(2, 2),
            Objective::Jepa,
        )
        .unwrap();
        assert_relative_eq!(balancedness_error(&m), 3.0 * 2f64.sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn learning_order_basic() {
        let trace = TrainTrace {
            steps: vec![0, 1, 2, 3],
            step_times: vec![0.0, 1.0, 2.0, 3.0],
            projections: vec![vec![0.0, 0.0, 0.0], vec![0.1, 0.9, 0.0], vec![0.6, 1.0, 0.1], vec![1.0, 1.0, 0.2]],
            loss: vec![0.0; 4],
            balancedness: vec![0.0; 4],
            lr: 1.0,
            depth: 1,
        };
        let lo = learning_order(&trace, 0.5, &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(lo.order, vec![1, 0, 2]);
        assert_eq!(lo.crossing_times[2], None);
        assert_relative_eq!(lo.crossing_times[0].unwrap(), 1.8, max_relative = 1e-12);
        let single = trace.select_features(&[2]);
        assert_eq!(learning_order(&single, 0.5, &[1.0]).unwrap().order, vec![0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn projections_invariant_under_conjugation(seed in 0u64..1000, depth in 1usize..5) {
            let d = 4;
            let m = init_gaussian(d, depth, 1.0, Objective::Mae, seed).unwrap();
            let mut rng = stream_rng(seed, 99);
            // R^1 = I and R^{L+1} = I; W^a → (R^{a+1})ᵀ W^a R^a
            let mut rs = vec![DMatrix::<f64>::identity(d, d)];
            for _ in 1..depth {
                rs.push(haar_orthogonal(d, &mut rng));
            }
            rs.push(DMatrix::identity(d, d));
            let layers: Vec<_> = (0..depth).map(|a| rs[a + 1].transpose() * &m.layers[a] * &rs[a]).collect();
            let c = DeepLinearModel::new(layers, m.decoder.clone(), m.objective).unwrap();
            for (a, b) in feature_projections(&m).iter().zip(feature_projections(&c)) {
                prop_assert!((a - b).abs() <= 1e-10 * a.max(1.0));
            }
        }
    }
}
