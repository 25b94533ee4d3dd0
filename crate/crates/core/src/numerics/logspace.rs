//! Log-domain helpers. Negative infinity is a legal value meaning
//! probability zero and acts as the identity of `log_sum_exp`.

use super::Real;
use crate::error::{Error, Result};

/// `ln(exp(a) + exp(b))` without overflow; `-inf` is absorbing.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    let d = lo - hi;
    // e^-40 vanishes next to 1 in f64
    if d < -40.0 {
        hi
    } else {
        hi + d.exp().ln_1p()
    }
}

/// `ln Σ exp(vᵢ)` computed by max-shifting.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::usage("log_sum_exp of an empty sequence"));
    }
    Ok(log_sum_exp_unchecked(values))
}

pub(crate) fn log_sum_exp_unchecked(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let s: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + s.ln()
}

/// Log-softmax of a logit vector.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = logits.to_vec();
    log_softmax_in_place(&mut out);
    out
}

pub(crate) fn log_softmax_in_place<F: Real>(v: &mut [F]) {
    let max = v.iter().copied().fold(F::neg_infinity(), F::max);
    let mut s = F::zero();
    for &x in v.iter() {
        s += (x - max).exp();
    }
    let lse = max + s.ln();
    for x in v.iter_mut() {
        *x -= lse;
    }
}
