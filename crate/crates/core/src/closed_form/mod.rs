//! Closed-form and implicit solutions of the reduced ODEs, and the analytic
//! critical-time expansions.
//!
//! Inputs are uniformly `(ε, λ, ρ, L)`; wherever an input variance would
//! appear it is written as `λ/ρ`.

mod lerch;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::objective::Objective;
pub use lerch::{lerch_phi, lerch_phi_exp, lerch_phi_series, SERIES_MAX_TERMS, SERIES_RTOL};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClosedFormError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("pole: a = {0} is a non-positive integer")]
    Pole(f64),
    #[error("series did not converge within {terms} terms")]
    PrecisionLoss { terms: usize },
    #[error("depth 1 MAE has an explicit solution; use mae_l1_solution")]
    UseL1Solution,
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

fn positive(name: &str, v: f64) -> Result<(), ClosedFormError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ClosedFormError::InvalidInput(format!("{name} must be positive and finite, got {v}")))
    }
}

fn depth_ok(l: u32) -> Result<(), ClosedFormError> {
    if l >= 1 {
        Ok(())
    } else {
        Err(ClosedFormError::InvalidInput("depth must be at least 1".into()))
    }
}

// ---------------------------------------------------------------- JEPA

/// `ln ψ` with `ψ = w^{1/L}/ρ`.
fn jepa_ln_psi(w: f64, rho: f64, l: u32) -> f64 {
    w.ln() / l as f64 - rho.ln()
}

/// `−ln(1−ψ) + ln ψ + Σ_{n=1}^{2L−1} ψ^{n−2L}/(n−2L)`, from `ln ψ`.
fn jepa_lhs(ln_psi: f64, l: u32) -> f64 {
    let psi = ln_psi.exp();
    let mut acc = -(-psi).ln_1p() + ln_psi;
    let two_l = 2 * l as i64;
    for n in 1..two_l {
        let e = (n - two_l) as f64;
        acc += (e * ln_psi).exp() / e;
    }
    acc
}

/// Slope `λρ^{2L−1}/L` of the right-hand side in `t`.
fn jepa_rate(lambda: f64, rho: f64, l: u32) -> f64 {
    let lf = l as f64;
    lambda * rho.powf(2.0 * lf - 1.0) / lf
}

fn jepa_check(w: f64, lambda: f64, rho: f64, l: u32, eps: f64) -> Result<(), ClosedFormError> {
    positive("lambda", lambda)?;
    positive("rho", rho)?;
    depth_ok(l)?;
    let fp = rho.powi(l as i32);
    if !(eps > 0.0 && eps < fp) {
        return Err(ClosedFormError::Domain(format!("epsilon must lie in (0, {fp}), got {eps}")));
    }
    if !(w > 0.0 && w < fp) {
        return Err(ClosedFormError::Domain(format!("w must lie in (0, {fp}), got {w}")));
    }
    Ok(())
}

/// Right-hand side `(λρ^{2L−1}/L)·t + 𝒞` of the JEPA implicit relation,
/// with `𝒞` fixed by the initial value `ε`.
pub fn jepa_implicit_rhs(t: f64, lambda: f64, rho: f64, l: u32, eps: f64) -> Result<f64, ClosedFormError> {
    jepa_check(eps, lambda, rho, l, eps)?;
    Ok(jepa_rate(lambda, rho, l) * t + jepa_lhs(jepa_ln_psi(eps, rho, l), l))
}

/// LHS − RHS of the JEPA implicit solution; zero along the exact trajectory.
pub fn jepa_implicit_residual(w: f64, t: f64, lambda: f64, rho: f64, l: u32, eps: f64) -> Result<f64, ClosedFormError> {
    jepa_check(w, lambda, rho, l, eps)?;
    let lhs = jepa_lhs(jepa_ln_psi(w, rho, l), l);
    Ok(lhs - jepa_implicit_rhs(t, lambda, rho, l, eps)?)
}

/// Time at which the JEPA trajectory started at `ε` reaches `w`.
pub fn jepa_implicit_time(w: f64, lambda: f64, rho: f64, l: u32, eps: f64) -> Result<f64, ClosedFormError> {
    jepa_check(w, lambda, rho, l, eps)?;
    let d = jepa_lhs(jepa_ln_psi(w, rho, l), l) - jepa_lhs(jepa_ln_psi(eps, rho, l), l);
    Ok(d / jepa_rate(lambda, rho, l))
}

// ----------------------------------------------------------------- MAE

/// `𝓘(u) = ((L−1)/((L+1)u))·Φ(u^{(L+1)/(L−1)}, 1, (1−L)/(1+L))` evaluated
/// from `w`, where `u = ρ^{(1−L)/(L+1)} w^{(L−1)/L}`.
fn mae_potential(w: f64, rho: f64, l: u32) -> Result<f64, ClosedFormError> {
    let lf = l as f64;
    let ln_u = (1.0 - lf) / (lf + 1.0) * rho.ln() + (lf - 1.0) / lf * w.ln();
    let tau = rho.ln() - (lf + 1.0) / lf * w.ln();
    let a = (1.0 - lf) / (1.0 + lf);
    let phi = lerch_phi_exp(tau, a)?;
    Ok((lf - 1.0) / (lf + 1.0) * (-ln_u).exp() * phi)
}

/// Time at which the MAE trajectory started at `ε` reaches `w` (`L > 1`).
pub fn mae_implicit_time(w: f64, lambda: f64, rho: f64, l: u32, eps: f64) -> Result<f64, ClosedFormError> {
    positive("lambda", lambda)?;
    positive("rho", rho)?;
    depth_ok(l)?;
    if l == 1 {
        return Err(ClosedFormError::UseL1Solution);
    }
    let lf = l as f64;
    let fp = rho.powf(lf / (lf + 1.0));
    if !(eps > 0.0 && eps < fp) {
        return Err(ClosedFormError::Domain(format!("epsilon must lie in (0, {fp}), got {eps}")));
    }
    if !(w >= eps && w < fp) {
        return Err(ClosedFormError::Domain(format!("w must lie in [{eps}, {fp}), got {w}")));
    }
    if w == eps {
        return Ok(0.0);
    }
    let di = mae_potential(w, rho, l)? - mae_potential(eps, rho, l)?;
    Ok(lf * di / (lambda * (lf - 1.0) * rho.powf((lf - 1.0) / (lf + 1.0))))
}

fn mae_l1_check(lambda: f64, rho: f64, eps: f64) -> Result<(), ClosedFormError> {
    positive("lambda", lambda)?;
    positive("rho", rho)?;
    if !(eps > 0.0 && eps * eps < rho) {
        return Err(ClosedFormError::Domain(format!("need 0 < epsilon^2 < rho, got epsilon = {eps}, rho = {rho}")));
    }
    Ok(())
}

/// Explicit depth-1 MAE solution `√ρ·(1 + e^{−x})^{−1/2}`,
/// `x = 2λt + ln(ε²/(ρ−ε²))`, evaluated without overflow for either sign of
/// `x`.
pub fn mae_l1_solution(t: f64, lambda: f64, rho: f64, eps: f64) -> Result<f64, ClosedFormError> {
    mae_l1_check(lambda, rho, eps)?;
    if !(t >= 0.0) {
        return Err(ClosedFormError::Domain(format!("t must be non-negative, got {t}")));
    }
    let c = 2.0 * eps.ln() - (rho - eps * eps).ln();
    let x = 2.0 * lambda * t + c;
    let s = rho.sqrt();
    Ok(if x >= 0.0 { s / (-x).exp().ln_1p().exp().sqrt() } else { s * (0.5 * x).exp() / x.exp().ln_1p().exp().sqrt() })
}

/// Inverse of [`mae_l1_solution`]: time at which the value `w` is reached.
pub fn mae_l1_time(w: f64, lambda: f64, rho: f64, eps: f64) -> Result<f64, ClosedFormError> {
    mae_l1_check(lambda, rho, eps)?;
    if !(w >= eps && w * w < rho) {
        return Err(ClosedFormError::Domain(format!("w must lie in [{eps}, {}), got {w}", rho.sqrt())));
    }
    let x = 2.0 * w.ln() - (rho - w * w).ln();
    let c = 2.0 * eps.ln() - (rho - eps * eps).ln();
    Ok((x - c) / (2.0 * lambda))
}

/// Exact time to reach `w` for either objective and any depth.
pub fn exact_time(objective: Objective, w: f64, lambda: f64, rho: f64, l: u32, eps: f64) -> Result<f64, ClosedFormError> {
    match (objective, l) {
        (Objective::Jepa, _) => jepa_implicit_time(w, lambda, rho, l, eps),
        (Objective::Mae, 1) => mae_l1_time(w, lambda, rho, eps),
        (Objective::Mae, _) => mae_implicit_time(w, lambda, rho, l, eps),
    }
}

/// Exact time to reach `p` times the fixed point.
pub fn exact_critical_time(objective: Objective, p: f64, lambda: f64, rho: f64, l: u32, eps: f64) -> Result<f64, ClosedFormError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(ClosedFormError::Domain(format!("p must lie in (0, 1), got {p}")));
    }
    let fp = crate::ode::fixed_point(objective, rho, l);
    exact_time(objective, p * fp, lambda, rho, l, eps)
}

// ------------------------------------------------------ critical times

/// Leading small-`ε` critical-time estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalTimeEstimate {
    pub leading: f64,
    pub objective: Objective,
    pub epsilon: f64,
    pub lambda: f64,
    /// `None` for MAE, whose leading term does not depend on `ρ`.
    pub rho: Option<f64>,
    pub depth: u32,
}

/// Unchecked Laurent sums; also used for integration horizons.
pub(crate) fn laurent_critical_time(objective: Objective, eps: f64, lambda: f64, rho: f64, l: u32) -> f64 {
    let lf = l as f64;
    match objective {
        Objective::Jepa => {
            let mut s = 0.0;
            for n in 1..(2 * l) {
                let nf = n as f64;
                let ln_den = nf.ln() + (2.0 * lf - nf - 1.0) * rho.ln() + nf / lf * eps.ln();
                s += lf * (-ln_den).exp();
            }
            s / lambda
        }
        Objective::Mae if l == 1 => eps.ln().abs() / lambda,
        Objective::Mae => lf / (lambda * (lf - 1.0) * eps.powf((lf - 1.0) / lf)),
    }
}

fn formula_check(eps: f64, lambda: f64, l: u32) -> Result<(), ClosedFormError> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(ClosedFormError::InvalidInput(format!("epsilon must lie in (0, 1), got {eps}")));
    }
    positive("lambda", lambda)?;
    depth_ok(l)
}

/// `(1/λ)·Σ_{n=1}^{2L−1} L/(n·ρ^{2L−n−1}·ε^{n/L})`, all `2L−1` terms.
pub fn jepa_critical_time_formula(eps: f64, lambda: f64, rho: f64, l: u32) -> Result<CriticalTimeEstimate, ClosedFormError> {
    formula_check(eps, lambda, l)?;
    positive("rho", rho)?;
    Ok(CriticalTimeEstimate {
        leading: laurent_critical_time(Objective::Jepa, eps, lambda, rho, l),
        objective: Objective::Jepa,
        epsilon: eps,
        lambda,
        rho: Some(rho),
        depth: l,
    })
}

/// `L/(λ(L−1)ε^{(L−1)/L})` for `L > 1`, `|ln ε|/λ` for `L = 1`.
pub fn mae_critical_time_formula(eps: f64, lambda: f64, l: u32) -> Result<CriticalTimeEstimate, ClosedFormError> {
    formula_check(eps, lambda, l)?;
    Ok(CriticalTimeEstimate {
        leading: laurent_critical_time(Objective::Mae, eps, lambda, 1.0, l),
        objective: Objective::Mae,
        epsilon: eps,
        lambda,
        rho: None,
        depth: l,
    })
}

/// Dispatch on objective; `rho` is ignored for MAE.
pub fn critical_time_formula(objective: Objective, eps: f64, lambda: f64, rho: f64, l: u32) -> Result<CriticalTimeEstimate, ClosedFormError> {
    match objective {
        Objective::Jepa => jepa_critical_time_formula(eps, lambda, rho, l),
        Objective::Mae => mae_critical_time_formula(eps, lambda, l),
    }
}

/// Leading-order `t*(ρ)/t*(ρ′)`:
/// JEPA `1 + ((2L−1)/(2L−2))·(1/ρ − 1/ρ′)·ε^{1/L}`, MAE `1`.
pub fn critical_time_ratio_formula(eps: f64, lambda: f64, rho: f64, rho_prime: f64, l: u32, objective: Objective) -> Result<f64, ClosedFormError> {
    formula_check(eps, lambda, l)?;
    positive("rho", rho)?;
    positive("rho_prime", rho_prime)?;
    if rho_prime < rho {
        return Err(ClosedFormError::InvalidInput(format!("need rho_prime >= rho, got {rho_prime} < {rho}")));
    }
    match objective {
        Objective::Mae => Ok(1.0),
        Objective::Jepa if l == 1 => Err(ClosedFormError::Unsupported("the JEPA ratio expansion needs L >= 2".into())),
        Objective::Jepa => {
            let lf = l as f64;
            Ok(1.0 + (2.0 * lf - 1.0) / (2.0 * lf - 2.0) * (1.0 / rho - 1.0 / rho_prime) * eps.powf(1.0 / lf))
        }
    }
}
