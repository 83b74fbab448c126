//! Overflow-safe scalar helpers.

use crate::error::{CdeError, Result};

/// `ln Σ exp(v_i)` via the max shift.
pub fn logsumexp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(CdeError::Empty("logsumexp of an empty vector"));
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max == f64::INFINITY {
        return Ok(max);
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    Ok(max + sum.ln())
}

pub fn softmax(values: &[f64]) -> Result<Vec<f64>> {
    let lse = logsumexp(values)?;
    Ok(values.iter().map(|v| (v - lse).exp()).collect())
}

pub fn log_softmax(values: &[f64]) -> Result<Vec<f64>> {
    let lse = logsumexp(values)?;
    Ok(values.iter().map(|v| v - lse).collect())
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn inverse_softplus(y: f64) -> f64 {
    // ln(e^y - 1) = y + ln(1 - e^{-y})
    y + (-(-y).exp()).ln_1p()
}
