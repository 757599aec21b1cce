//! Reduced per-feature gradient-flow ODEs.
//!
//! After decoupling, each feature's encoder projection `w̄` obeys a scalar
//! autonomous ODE:
//!
//! - JEPA: `ẇ = λ(w^{3−1/L} − w³/ρ)`, fixed point `ρ^L`
//! - MAE:  `ẇ = λ(w^{2−1/L} − w³/ρ)`, fixed point `ρ^{L/(L+1)}`
//!
//! Starting below the fixed point the solution is a long plateau followed
//! by a sharp sigmoidal rise, so [`integrate`] uses an adaptive
//! Dormand–Prince 5(4) scheme and reports both a log-spaced grid and every
//! accepted step.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::closed_form;
use crate::data::GaussianDataSpec;
use crate::objective::Objective;

pub const DEFAULT_RTOL: f64 = 1e-10;
pub const DEFAULT_ATOL: f64 = 1e-12;
/// Default fraction of the fixed point defining the critical time.
pub const DEFAULT_P: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("step size underflow at t = {t} (h = {h})")]
    Stiffness { t: f64, h: f64 },
    #[error("non-finite state at t = {t}")]
    Divergence { t: f64 },
    #[error("exceeded {0} integration steps")]
    MaxSteps(usize),
    #[error("threshold {threshold} never reached (last value {last})")]
    NotConverged { threshold: f64, last: f64 },
}

/// Integration horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    /// Integrate exactly to this time.
    Fixed(f64),
    /// Stop at convergence or at 50× the analytic critical-time estimate.
    Auto,
}

/// One decoupled coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdeProblem {
    pub objective: Objective,
    pub depth: u32,
    pub lambda: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub t_end: Horizon,
}

impl OdeProblem {
    pub fn new(objective: Objective, depth: u32, lambda: f64, rho: f64, epsilon: f64, t_end: Horizon) -> Result<Self, OdeError> {
        let p = Self { objective, depth, lambda, rho, epsilon, t_end };
        p.validate()?;
        Ok(p)
    }

    pub fn auto(objective: Objective, depth: u32, lambda: f64, rho: f64, epsilon: f64) -> Result<Self, OdeError> {
        Self::new(objective, depth, lambda, rho, epsilon, Horizon::Auto)
    }

    pub fn validate(&self) -> Result<(), OdeError> {
        let bad = |m: String| Err(OdeError::InvalidProblem(m));
        if self.depth < 1 {
            return bad("depth must be at least 1".into());
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be positive and finite, got {}", self.lambda));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return bad(format!("rho must be positive and finite, got {}", self.rho));
        }
        let fp = self.fixed_point();
        if !(self.epsilon > 0.0 && self.epsilon < fp) {
            return bad(format!("epsilon must lie in (0, {fp}), got {}", self.epsilon));
        }
        if let Horizon::Fixed(t) = self.t_end {
            if !(t >= 0.0 && t.is_finite()) {
                return bad(format!("t_end must be non-negative and finite, got {t}"));
            }
        }
        Ok(())
    }

    pub fn fixed_point(&self) -> f64 {
        fixed_point(self.objective, self.rho, self.depth)
    }

    /// Right-hand side without domain checks (negative `w` yields NaN).
    pub fn rhs(&self, w: f64) -> f64 {
        raw_rhs(self.objective, w, self.lambda, self.rho, self.depth)
    }

    /// `∂f/∂w` without domain checks.
    pub fn rhs_derivative(&self, w: f64) -> f64 {
        let l = self.depth as f64;
        let w2 = w * w;
        let growth = match self.objective {
            Objective::Jepa => (3.0 - 1.0 / l) * w2 * w.powf(-1.0 / l),
            Objective::Mae => (2.0 - 1.0 / l) * w * w.powf(-1.0 / l),
        };
        self.lambda * (growth - 3.0 * w2 / self.rho)
    }

    /// Linear relaxation rate `|f'(w*)|` at the fixed point.
    pub fn relaxation_rate(&self) -> f64 {
        let l = self.depth as f64;
        match self.objective {
            Objective::Jepa => self.lambda * self.rho.powf(2.0 * l - 1.0) / l,
            Objective::Mae => self.lambda * self.rho.powf((l - 1.0) / (l + 1.0)) * (1.0 + 1.0 / l),
        }
    }

    /// The end time used in [`Horizon::Auto`] mode.
    pub fn auto_horizon(&self) -> f64 {
        let est = closed_form::laurent_critical_time(self.objective, self.epsilon, self.lambda, self.rho, self.depth);
        50.0 * (est.max(0.0) + 1.0 / self.relaxation_rate())
    }
}

#[inline]
fn raw_rhs(objective: Objective, w: f64, lambda: f64, rho: f64, depth: u32) -> f64 {
    let inv_l = 1.0 / depth as f64;
    let w3 = w * w * w;
    let growth = match objective {
        Objective::Jepa => w3 * w.powf(-inv_l),
        Objective::Mae => w * w * w.powf(-inv_l),
    };
    lambda * (growth - w3 / rho)
}

fn checked_rhs(objective: Objective, w: f64, lambda: f64, rho: f64, depth: u32) -> Result<f64, OdeError> {
    if !(w >= 0.0) {
        return Err(OdeError::Domain(format!("w must be non-negative, got {w}")));
    }
    if depth < 1 {
        return Err(OdeError::Domain("depth must be at least 1".into()));
    }
    if w == 0.0 {
        return Ok(0.0);
    }
    Ok(raw_rhs(objective, w, lambda, rho, depth))
}

/// `λ(w^{3−1/L} − w³/ρ)`.
pub fn jepa_rhs(w: f64, lambda: f64, rho: f64, depth: u32) -> Result<f64, OdeError> {
    checked_rhs(Objective::Jepa, w, lambda, rho, depth)
}

/// `λ(w^{2−1/L} − w³/ρ)`.
pub fn mae_rhs(w: f64, lambda: f64, rho: f64, depth: u32) -> Result<f64, OdeError> {
    checked_rhs(Objective::Mae, w, lambda, rho, depth)
}

pub fn rhs(objective: Objective, w: f64, lambda: f64, rho: f64, depth: u32) -> Result<f64, OdeError> {
    checked_rhs(objective, w, lambda, rho, depth)
}

/// `ρ^L` for JEPA, `ρ^{L/(L+1)}` for MAE.
pub fn fixed_point(objective: Objective, rho: f64, depth: u32) -> f64 {
    let l = depth as f64;
    match objective {
        Objective::Jepa => rho.powf(l),
        Objective::Mae => rho.powf(l / (l + 1.0)),
    }
}

/// Discretised solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeTrajectory {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub converged: bool,
    pub fixed_point: f64,
}

impl OdeTrajectory {
    /// Wrap externally produced samples (e.g. a closed-form solution).
    pub fn from_samples(times: Vec<f64>, values: Vec<f64>, fixed_point: f64) -> Self {
        Self { times, values, converged: false, fixed_point }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_value(&self) -> f64 {
        *self.values.last().unwrap_or(&f64::NAN)
    }

    /// Piecewise-linear value at `t`, clamped to the end points.
    pub fn interpolate(&self, t: f64) -> f64 {
        let n = self.times.len();
        if n == 0 {
            return f64::NAN;
        }
        if t <= self.times[0] {
            return self.values[0];
        }
        if t >= self.times[n - 1] {
            return self.values[n - 1];
        }
        let i = self.times.partition_point(|&s| s <= t);
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let (v0, v1) = (self.values[i - 1], self.values[i]);
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }
}

/// Step-control and output settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Log-grid density of the recorded output.
    pub points_per_decade: usize,
    /// The log grid starts at `t_end · 10^{-decades}`.
    pub decades: usize,
    /// Steps are capped at `step_fraction / |∂f/∂w|`, which keeps the
    /// transition finely sampled and the approach to the fixed point
    /// monotone.
    pub step_fraction: f64,
    /// Cubic-Hermite points recorded inside each accepted step (counting the
    /// step end), so that linear interpolation of the output stays accurate.
    pub dense_substeps: usize,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self { rtol: DEFAULT_RTOL, atol: DEFAULT_ATOL, max_steps: 2_000_000, points_per_decade: 40, decades: 8, step_fraction: 0.1, dense_substeps: 4 }
    }
}

impl IntegratorOptions {
    pub fn with_tolerances(rtol: f64, atol: f64) -> Self {
        Self { rtol, atol, ..Self::default() }
    }
}

/// Integrate with default output settings.
pub fn integrate(problem: &OdeProblem, rtol: f64, atol: f64) -> Result<OdeTrajectory, OdeError> {
    integrate_with(problem, &IntegratorOptions::with_tolerances(rtol, atol))
}

pub fn integrate_with(problem: &OdeProblem, opts: &IntegratorOptions) -> Result<OdeTrajectory, OdeError> {
    problem.validate()?;
    check_tolerances(opts)?;
    let fp = problem.fixed_point();
    let (t_end, auto) = match problem.t_end {
        Horizon::Fixed(t) => (t, false),
        Horizon::Auto => (problem.auto_horizon(), true),
    };
    if t_end == 0.0 {
        return Ok(OdeTrajectory { times: vec![0.0], values: vec![problem.epsilon], converged: false, fixed_point: fp });
    }
    let grid = log_grid(t_end, opts.points_per_decade, opts.decades);
    let run = drive(problem, &grid, opts, auto, true)?;
    let last = *run.values.last().unwrap();
    let converged = run.converged || is_converged(problem, last, opts);
    Ok(OdeTrajectory { times: run.times, values: run.values, converged, fixed_point: fp })
}

/// Solution values at the requested non-decreasing, non-negative `times`.
pub fn integrate_at(problem: &OdeProblem, times: &[f64], opts: &IntegratorOptions) -> Result<Vec<f64>, OdeError> {
    problem.validate()?;
    check_tolerances(opts)?;
    if times.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
        return Err(OdeError::InvalidProblem("requested times must be finite and non-negative".into()));
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(OdeError::InvalidProblem("requested times must be non-decreasing".into()));
    }
    let stops: Vec<f64> = {
        let mut s: Vec<f64> = times.iter().copied().filter(|&t| t > 0.0).collect();
        s.dedup();
        s
    };
    let run = drive(problem, &stops, opts, false, false)?;
    // run.times = [0, stops...]
    Ok(times
        .iter()
        .map(|&t| {
            if t == 0.0 {
                problem.epsilon
            } else {
                let i = run.times.partition_point(|&s| s < t);
                run.values[i]
            }
        })
        .collect())
}

fn check_tolerances(opts: &IntegratorOptions) -> Result<(), OdeError> {
    if !(opts.rtol > 0.0 && opts.atol > 0.0 && opts.step_fraction > 0.0) {
        return Err(OdeError::InvalidProblem("tolerances and step fraction must be positive".into()));
    }
    Ok(())
}

fn is_converged(problem: &OdeProblem, w: f64, opts: &IntegratorOptions) -> bool {
    let fp = problem.fixed_point();
    problem.rhs(w).abs() < opts.atol * (1.0 + fp) && (w - fp).abs() <= opts.rtol * fp
}

fn log_grid(t_end: f64, per_decade: usize, decades: usize) -> Vec<f64> {
    let n = per_decade.max(1) * decades.max(1);
    let lo = t_end.log10() - decades as f64;
    let mut g: Vec<f64> = (0..n).map(|k| 10f64.powf(lo + k as f64 / per_decade.max(1) as f64)).collect();
    g.push(t_end);
    g
}

struct Run {
    times: Vec<f64>,
    values: Vec<f64>,
    converged: bool,
}

// Dormand–Prince 5(4) tableau; the system is autonomous so the nodes c_i are not needed.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// One trial step; returns `(y_new, error_estimate, f(y_new))`.
#[inline]
fn dp_step<F: Fn(f64) -> f64>(f: &F, y: f64, h: f64, k1: f64) -> (f64, f64, f64) {
    let k2 = f(y + h * A21 * k1);
    let k3 = f(y + h * (A31 * k1 + A32 * k2));
    let k4 = f(y + h * (A41 * k1 + A42 * k2 + A43 * k3));
    let k5 = f(y + h * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4));
    let k6 = f(y + h * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5));
    let y_new = y + h * (B1 * k1 + B3 * k3 + B4 * k4 + B5 * k5 + B6 * k6);
    let k7 = f(y_new);
    let err = h * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7);
    (y_new, err, k7)
}

#[inline]
fn hermite(y0: f64, f0: f64, y1: f64, f1: f64, h: f64, th: f64) -> f64 {
    let th2 = th * th;
    let th3 = th2 * th;
    (2.0 * th3 - 3.0 * th2 + 1.0) * y0 + (th3 - 2.0 * th2 + th) * h * f0 + (-2.0 * th3 + 3.0 * th2) * y1 + (th3 - th2) * h * f1
}

/// Core stepping loop. Steps are clipped to land exactly on every entry of
/// `stops` (sorted, positive). With `record_all`, every accepted step is
/// recorded as well.
fn drive(problem: &OdeProblem, stops: &[f64], opts: &IntegratorOptions, stop_on_convergence: bool, record_all: bool) -> Result<Run, OdeError> {
    let f = |w: f64| problem.rhs(w);
    let mut t = 0.0_f64;
    let mut y = problem.epsilon;
    let mut k1 = f(y);
    let mut times = vec![0.0];
    let mut values = vec![y];
    if stops.is_empty() {
        return Ok(Run { times, values, converged: false });
    }
    let mut h = if k1 > 0.0 { (0.01 * y / k1).min(stops[0]) } else { stops[0] };
    let mut next = 0usize;
    let mut steps = 0usize;
    while next < stops.len() {
        if steps >= opts.max_steps {
            return Err(OdeError::MaxSteps(opts.max_steps));
        }
        steps += 1;
        let target = stops[next];
        let slope = problem.rhs_derivative(y).abs();
        if slope > 0.0 {
            h = h.min(opts.step_fraction / slope);
        }
        let (hs, lands) = if t + h >= target * (1.0 - 1e-13) { (target - t, true) } else { (h, false) };
        let (y_new, err, k_new) = dp_step(&f, y, hs, k1);
        let nonfinite = !y_new.is_finite() || !k_new.is_finite();
        if nonfinite {
            h = hs * 0.1;
        } else {
            let scale = opts.atol + opts.rtol * y.abs().max(y_new.abs());
            let errn = (err / scale).abs();
            if errn <= 1.0 {
                if record_all {
                    let m = opts.dense_substeps.max(1);
                    for j in 1..m {
                        let th = j as f64 / m as f64;
                        times.push(t + th * hs);
                        values.push(hermite(y, k1, y_new, k_new, hs, th));
                    }
                }
                t = if lands { target } else { t + hs };
                y = y_new;
                k1 = k_new;
                if lands || record_all {
                    times.push(t);
                    values.push(y);
                }
                if lands {
                    next += 1;
                }
                if stop_on_convergence && is_converged(problem, y, opts) {
                    if !lands && !record_all {
                        times.push(t);
                        values.push(y);
                    }
                    return Ok(Run { times, values, converged: true });
                }
                let fac = if errn == 0.0 { 5.0 } else { (0.9 * errn.powf(-0.2)).clamp(0.2, 5.0) };
                h = if lands { h.max(hs * fac) } else { hs * fac };
                continue;
            }
            h = hs * (0.9 * errn.powf(-0.2)).clamp(0.1, 1.0);
        }
        if h < 1e-14 * t.max(1e-300) || h < f64::MIN_POSITIVE {
            return Err(if nonfinite { OdeError::Divergence { t } } else { OdeError::Stiffness { t, h } });
        }
    }
    Ok(Run { times, values, converged: false })
}

/// Smallest time at which `values` reach `p · fixed_point`, linearly
/// interpolated between the bracketing samples.
pub fn empirical_critical_time(traj: &OdeTrajectory, p: f64) -> Result<f64, OdeError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(OdeError::Domain(format!("p must lie in (0, 1), got {p}")));
    }
    let threshold = p * traj.fixed_point;
    let i = traj.values.iter().position(|&v| v >= threshold).ok_or(OdeError::NotConverged {
        threshold,
        last: traj.last_value(),
    })?;
    if i == 0 {
        return Ok(traj.times[0]);
    }
    let (t0, t1) = (traj.times[i - 1], traj.times[i]);
    let (v0, v1) = (traj.values[i - 1], traj.values[i]);
    Ok(t0 + (t1 - t0) * (threshold - v0) / (v1 - v0))
}

/// One auto-horizon integration per feature of `spec`, in parallel; results
/// keep feature order.
pub fn integrate_spec(
    spec: &GaussianDataSpec,
    objective: Objective,
    depth: u32,
    epsilon: f64,
    opts: &IntegratorOptions,
) -> Vec<Result<OdeTrajectory, OdeError>> {
    spec.features
        .par_iter()
        .map(|p| {
            let rho = p.lambda / p.sigma_sq;
            let problem = OdeProblem::auto(objective, depth, p.lambda, rho, epsilon)?;
            integrate_with(&problem, opts)
        })
        .collect()
}

/// Critical time of one problem, integrated with `opts`.
pub fn critical_time(problem: &OdeProblem, p: f64, opts: &IntegratorOptions) -> Result<f64, OdeError> {
    let traj = integrate_with(problem, opts)?;
    empirical_critical_time(&traj, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closed_form::mae_l1_solution;
    use crate::data::FeatureParams;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn opts() -> IntegratorOptions {
        IntegratorOptions::default()
    }

    #[test]
    fn rhs_examples() {
        assert_eq!(jepa_rhs(1.0, 1.0, 1.0, 1).unwrap(), 0.0);
        assert_relative_eq!(jepa_rhs(0.5, 2.0, 1.0, 2).unwrap(), 0.103_553_390_593_273_76, max_relative = 1e-14);
        assert_relative_eq!(mae_rhs(0.25, 1.0, 2.0, 2).unwrap(), 0.117_187_5, max_relative = 1e-14);
        assert_eq!(mae_rhs(1.0, 1.0, 1.0, 5).unwrap(), 0.0);
        assert!(jepa_rhs(-0.1, 1.0, 1.0, 2).is_err());
        assert!(mae_rhs(-0.1, 1.0, 1.0, 2).is_err());
    }

    #[test]
    fn rhs_vanishes_at_fixed_points() {
        for &l in &[1u32, 2, 3, 5, 8] {
            for &rho in &[0.3, 0.5, 1.0, 1.7, 3.0] {
                for &lam in &[0.1, 1.0, 4.0] {
                    let wj = fixed_point(Objective::Jepa, rho, l);
                    let wm = fixed_point(Objective::Mae, rho, l);
                    let scale = lam * wj.powi(3) / rho;
                    assert!(jepa_rhs(wj, lam, rho, l).unwrap().abs() <= 1e-13 * scale.max(1e-300));
                    let scale = lam * wm.powi(3) / rho;
                    assert!(mae_rhs(wm, lam, rho, l).unwrap().abs() <= 1e-13 * scale);
                }
            }
        }
    }

    #[test]
    fn fixed_point_examples() {
        assert_relative_eq!(fixed_point(Objective::Mae, 4.0, 1), 2.0, max_relative = 1e-15);
        assert_relative_eq!(fixed_point(Objective::Jepa, 0.5, 3), 0.125, max_relative = 1e-15);
        for o in Objective::ALL {
            assert_eq!(fixed_point(o, 1.0, 7), 1.0);
        }
    }

    #[test]
    fn invalid_problems_rejected() {
        assert!(OdeProblem::auto(Objective::Jepa, 0, 1.0, 1.0, 1e-3).is_err());
        assert!(OdeProblem::auto(Objective::Jepa, 1, -1.0, 1.0, 1e-3).is_err());
        assert!(OdeProblem::auto(Objective::Jepa, 1, 1.0, 0.0, 1e-3).is_err());
        assert!(OdeProblem::auto(Objective::Jepa, 2, 1.0, 0.5, 0.25).is_err());
        assert!(OdeProblem::auto(Objective::Mae, 2, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn jepa_l1_converges_and_is_sigmoidal() {
        let p = OdeProblem::auto(Objective::Jepa, 1, 1.0, 1.0, 1e-3).unwrap();
        let tr = integrate(&p, DEFAULT_RTOL, DEFAULT_ATOL).unwrap();
        assert!(tr.converged);
        assert!((tr.last_value() - 1.0).abs() <= 1e-3);
        // sigmoidal: slope is small at both ends and peaks in the middle
        let t_half = empirical_critical_time(&tr, 0.5).unwrap();
        let slope = |t: f64| jepa_rhs(tr.interpolate(t), 1.0, 1.0, 1).unwrap();
        assert!(slope(t_half) > 100.0 * slope(0.0));
        assert!(slope(t_half) > 100.0 * slope(tr.times[tr.len() - 1]));
    }

    #[test]
    fn jepa_l1_matches_fine_fixed_step_rk4() {
        let p = OdeProblem::new(Objective::Jepa, 1, 1.0, 1.0, 1e-3, Horizon::Fixed(1100.0)).unwrap();
        let times: Vec<f64> = (1..=11).map(|k| 100.0 * k as f64).collect();
        let got = integrate_at(&p, &times, &opts()).unwrap();
        // classical RK4 at h = 1e-3
        let f = |w: f64| w * w - w * w * w;
        let h = 1e-3;
        let mut w = 1e-3;
        let mut k = 0usize;
        for (i, &t) in times.iter().enumerate() {
            let n = (t / h).round() as usize;
            while k < n {
                let a = f(w);
                let b = f(w + 0.5 * h * a);
                let c = f(w + 0.5 * h * b);
                let d = f(w + h * c);
                w += h / 6.0 * (a + 2.0 * b + 2.0 * c + d);
                k += 1;
            }
            assert!((got[i] - w).abs() < 1e-8, "t={t}: {} vs {}", got[i], w);
        }
    }

    #[test]
    fn mae_l5_reaches_unit_fixed_point() {
        let p = OdeProblem::auto(Objective::Mae, 5, 1.0, 1.0, 1e-3).unwrap();
        let tr = integrate(&p, DEFAULT_RTOL, DEFAULT_ATOL).unwrap();
        assert!(tr.converged);
        assert!((tr.last_value() - 1.0).abs() <= 1e-3);
    }

    #[test]
    fn zero_horizon_is_trivial() {
        let p = OdeProblem::new(Objective::Mae, 3, 2.0, 0.7, 0.01, Horizon::Fixed(0.0)).unwrap();
        let tr = integrate(&p, DEFAULT_RTOL, DEFAULT_ATOL).unwrap();
        assert_eq!(tr.times, vec![0.0]);
        assert_eq!(tr.values, vec![0.01]);
    }

    #[test]
    fn trajectory_invariants() {
        for o in Objective::ALL {
            for &(l, rho) in &[(1u32, 0.5), (2, 1.0), (5, 1.5)] {
                let p = OdeProblem::auto(o, l, 1.0, rho, 1e-3).unwrap();
                let tr = integrate(&p, DEFAULT_RTOL, DEFAULT_ATOL).unwrap();
                assert_eq!(tr.values[0], 1e-3);
                assert!(tr.times.windows(2).all(|w| w[1] > w[0]));
                assert!(tr.values.windows(2).all(|w| w[1] > w[0]), "{o} L={l} rho={rho}");
                assert!(tr.values.iter().all(|&v| v <= tr.fixed_point * (1.0 + 1e-12)));
            }
        }
    }

    #[test]
    fn critical_time_of_mae_l1_closed_form() {
        let times: Vec<f64> = (0..=20_000).map(|k| k as f64 * 1e-3).collect();
        let values: Vec<f64> = times.iter().map(|&t| mae_l1_solution(t, 1.0, 1.0, 0.01).unwrap()).collect();
        let tr = OdeTrajectory::from_samples(times, values, 1.0);
        let t = empirical_critical_time(&tr, 0.5).unwrap();
        assert!((t - 4.055_814_039_153_87).abs() < 1e-6, "{t}");
    }

    #[test]
    fn jepa_l1_critical_time_near_inverse_epsilon() {
        let p = OdeProblem::auto(Objective::Jepa, 1, 1.0, 1.0, 1e-3).unwrap();
        let tr = integrate(&p, DEFAULT_RTOL, DEFAULT_ATOL).unwrap();
        let t = empirical_critical_time(&tr, 0.5).unwrap();
        // quadrature oracle (mpmath) for the time to reach 1/2
        assert_relative_eq!(t, 1_004.906_754_778_648_5, max_relative = 1e-6);
        assert!((t / 1000.0 - 1.0).abs() < 0.01);
    }

    #[test]
    fn critical_time_quadrature_oracles() {
        let cases = [
            (Objective::Mae, 5u32, 1.0, 1e-4, 1_981.053_217_245_262),
            (Objective::Jepa, 5, 1.0, 1e-3, 195_092.595_738_200_1),
            (Objective::Mae, 2, 1.0, 1e-3, 61.008_061_882_219_56),
            (Objective::Jepa, 2, 1.0, 1e-2, 786.109_817_787_467_9),
        ];
        for (o, l, rho, eps, want) in cases {
            let p = OdeProblem::auto(o, l, 1.0, rho, eps).unwrap();
            let t = critical_time(&p, 0.5, &opts()).unwrap();
            assert_relative_eq!(t, want, max_relative = 1e-6);
        }
    }

    #[test]
    fn threshold_not_reached_is_an_error() {
        let p = OdeProblem::new(Objective::Jepa, 1, 1.0, 1.0, 1e-3, Horizon::Fixed(10.0)).unwrap();
        let tr = integrate(&p, DEFAULT_RTOL, DEFAULT_ATOL).unwrap();
        assert!(matches!(empirical_critical_time(&tr, 0.5), Err(OdeError::NotConverged { .. })));
        assert!(empirical_critical_time(&tr, 1.5).is_err());
    }

    #[test]
    fn integrate_at_agrees_with_dense_run() {
        let p = OdeProblem::auto(Objective::Mae, 3, 1.0, 0.8, 1e-2).unwrap();
        let tr = integrate(&p, DEFAULT_RTOL, DEFAULT_ATOL).unwrap();
        let pick: Vec<f64> = tr.times.iter().step_by(7).copied().collect();
        let want: Vec<f64> = tr.values.iter().step_by(7).copied().collect();
        let got = integrate_at(&p, &pick, &opts()).unwrap();
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-6 * w, "{g} vs {w}");
        }
    }

    #[test]
    fn spec_sweep_keeps_feature_order() {
        let spec = GaussianDataSpec::new(vec![
            FeatureParams::from_lambda_rho(1.0, 0.5),
            FeatureParams::from_lambda_rho(2.0, 1.0),
            FeatureParams::new(-1.0, 1.0),
        ]);
        let out = integrate_spec(&spec, Objective::Mae, 2, 1e-3, &opts());
        assert_relative_eq!(out[0].as_ref().unwrap().fixed_point, 0.5f64.powf(2.0 / 3.0));
        assert_relative_eq!(out[1].as_ref().unwrap().fixed_point, 1.0);
        assert!(out[2].is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn lambda_rescales_time(c in 0.2f64..5.0, l in 1u32..4, mae in any::<bool>()) {
            let o = if mae { Objective::Mae } else { Objective::Jepa };
            let a = OdeProblem::auto(o, l, 1.0, 1.0, 1e-2).unwrap();
            let b = OdeProblem::auto(o, l, c, 1.0, 1e-2).unwrap();
            let ta = critical_time(&a, 0.5, &opts()).unwrap();
            let tb = critical_time(&b, 0.5, &opts()).unwrap();
            prop_assert!((tb * c / ta - 1.0).abs() < 1e-6);
        }

        #[test]
        fn critical_time_monotone_in_p(p1 in 0.05f64..0.95, p2 in 0.05f64..0.95) {
            let p = OdeProblem::auto(Objective::Jepa, 2, 1.0, 1.2, 1e-2).unwrap();
            let tr = integrate(&p, DEFAULT_RTOL, DEFAULT_ATOL).unwrap();
            let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
            prop_assert!(empirical_critical_time(&tr, lo).unwrap() <= empirical_critical_time(&tr, hi).unwrap());
        }
    }
}
