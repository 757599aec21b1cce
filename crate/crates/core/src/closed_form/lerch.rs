//! Lerch transcendent at `s = 1`: `Φ(z, 1, a) = Σₙ zⁿ / (n + a)` on `|z| < 1`.
//!
//! Small `|z|` uses the defining series with an explicit remainder bound.
//! Near `z → 1` the series converges too slowly, so `a` is shifted into
//! `(0, 1]` and the Hurwitz-zeta expansion in `τ = −ln z` is summed instead:
//!
//! `Φ(e^{−τ}, 1, b) = e^{bτ} [−ln τ − γ − ψ(b) − Σ_{k≥1} B_k(b) (−τ)^k / (k·k!)]`
//!
//! which converges for `τ < 2π`. Negative `z` is reduced to `z²` by splitting
//! even and odd terms.

use statrs::function::gamma::digamma;

use super::ClosedFormError;

/// Relative truncation tolerance of the direct series.
pub const SERIES_RTOL: f64 = 1e-12;
/// Term cap of the direct series.
pub const SERIES_MAX_TERMS: usize = 10_000_000;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const EXPANSION_TERMS: usize = 40;

fn check_args(z: f64, a: f64) -> Result<(), ClosedFormError> {
    if !z.is_finite() || z.abs() >= 1.0 {
        return Err(ClosedFormError::Domain(format!("lerch_phi requires |z| < 1, got z = {z}")));
    }
    if !a.is_finite() {
        return Err(ClosedFormError::Domain(format!("lerch_phi requires finite a, got {a}")));
    }
    if a <= 0.0 && a.fract() == 0.0 {
        return Err(ClosedFormError::Pole(a));
    }
    Ok(())
}

/// `Φ(z, 1, a)` to about 12 significant digits.
pub fn lerch_phi(z: f64, a: f64) -> Result<f64, ClosedFormError> {
    check_args(z, a)?;
    if z.abs() <= 0.5 {
        return lerch_phi_series(z, a);
    }
    if z > 0.0 {
        return Ok(near_one(z, a));
    }
    let z2 = z * z;
    let even = lerch_phi(z2, 0.5 * a)?;
    let odd = lerch_phi(z2, 0.5 * (a + 1.0))?;
    Ok(0.5 * even + 0.5 * z * odd)
}

/// The defining series, truncated once the geometric remainder bound
/// `|z|^N / ((a+N)(1−|z|))` drops below [`SERIES_RTOL`] times the partial
/// sum. Fails with `PrecisionLoss` after [`SERIES_MAX_TERMS`] terms.
pub fn lerch_phi_series(z: f64, a: f64) -> Result<f64, ClosedFormError> {
    check_args(z, a)?;
    let az = z.abs();
    let mut sum = 0.0;
    let mut comp = 0.0; // Kahan compensation
    let mut zn = 1.0;
    for n in 0..SERIES_MAX_TERMS {
        let an = a + n as f64;
        let term = zn / an;
        let y = term - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
        zn *= z;
        let next = an + 1.0;
        if next > 0.0 {
            let bound = zn.abs() / (next * (1.0 - az));
            if bound < SERIES_RTOL * sum.abs() || zn == 0.0 {
                return Ok(sum);
            }
        }
    }
    Err(ClosedFormError::PrecisionLoss { terms: SERIES_MAX_TERMS })
}

/// `0 < b`, `τ < 2π`.
fn hurwitz_expansion(tau: f64, b: f64) -> f64 {
    let bern = bernoulli_numbers(EXPANSION_TERMS);
    let mut series = 0.0;
    let mut pow = 1.0; // (−τ)^k / k!
    for k in 1..=EXPANSION_TERMS {
        pow *= -tau / k as f64;
        series += bernoulli_poly(&bern, k, b) * pow / k as f64;
    }
    (b * tau).exp() * (-tau.ln() - EULER_GAMMA - digamma(b) - series)
}

/// `Φ(e^{−τ}, 1, a)` for `0 < τ`, taking `τ` directly so that arguments
/// extremely close to `z = 1` keep full relative precision in `τ`.
pub fn lerch_phi_exp(tau: f64, a: f64) -> Result<f64, ClosedFormError> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(ClosedFormError::Domain(format!("lerch_phi_exp requires tau > 0, got {tau}")));
    }
    if tau >= 2f64.ln() {
        return lerch_phi((-tau).exp(), a);
    }
    check_args(0.0, a)?;
    Ok(shifted_expansion(tau, a))
}

fn near_one(z: f64, a: f64) -> f64 {
    shifted_expansion(-z.ln(), a)
}

fn shifted_expansion(tau: f64, a: f64) -> f64 {
    let z = (-tau).exp();
    let mut b = a - a.floor();
    if b == 0.0 {
        b = 1.0;
    }
    let shift = (b - a).round() as i64;
    let base = hurwitz_expansion(tau, b);
    if shift >= 0 {
        // Φ(z,a) = Σ_{n<m} zⁿ/(n+a) + z^m Φ(z, a+m)
        let mut head = 0.0;
        let mut zn = 1.0;
        for n in 0..shift {
            head += zn / (a + n as f64);
            zn *= z;
        }
        head + zn * base
    } else {
        // a = b + k: Φ(z,a) = z^{−k} (Φ(z,b) − Σ_{n<k} zⁿ/(n+b))
        let k = (-shift) as i32;
        let mut head = 0.0;
        let mut zn = 1.0;
        for n in 0..k {
            head += zn / (b + n as f64);
            zn *= z;
        }
        (base - head) / z.powi(k)
    }
}

/// `B_0 … B_n` with the `B_1 = −1/2` convention.
fn bernoulli_numbers(n: usize) -> Vec<f64> {
    let mut b = vec![0.0; n + 1];
    b[0] = 1.0;
    for m in 1..=n {
        if m > 1 && m % 2 == 1 {
            continue;
        }
        // Σ_{j=0}^{m} C(m+1, j) B_j = 0
        let mut acc = 0.0;
        let mut c = 1.0; // C(m+1, j)
        for (j, bj) in b.iter().enumerate().take(m) {
            acc += c * bj;
            c = c * (m + 1 - j) as f64 / (j + 1) as f64;
        }
        b[m] = -acc / (m + 1) as f64;
    }
    b
}

fn bernoulli_poly(bern: &[f64], k: usize, x: f64) -> f64 {
    // Σ_j C(k, j) B_j x^{k−j}, Horner in x
    let mut acc = 0.0;
    let mut c = 1.0;
    let mut coeffs = Vec::with_capacity(k + 1);
    for (j, bj) in bern.iter().enumerate().take(k + 1) {
        coeffs.push(c * bj);
        c = c * (k - j) as f64 / (j + 1) as f64;
    }
    // coeffs[j] multiplies x^{k−j}
    for cj in &coeffs {
        acc = acc * x + cj;
    }
    acc
}
