//! Smooth maximum.
//!
//! `smooth_max_n` is the softmax-weighted mean of its arguments. The
//! switching factor `beta` interpolates the whole family: `beta -> inf`
//! recovers the hard maximum, `beta = 0` the arithmetic mean, and
//! `beta -> -inf` the minimum. The two-argument form reduces to a single
//! sigmoid and is the building block of every activation in this crate.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::sigmoid;

/// Configuration wrapper for a smooth-max evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothMaxConfig {
    /// Switching factor. Any finite value; negative values give a smooth
    /// minimum.
    pub beta: f64,
}

impl SmoothMaxConfig {
    pub fn new(beta: f64) -> Self {
        SmoothMaxConfig { beta }
    }

    pub fn eval_n(&self, values: &[f64]) -> Result<f64> {
        smooth_max_n(values, self.beta)
    }

    pub fn eval2(&self, a: f64, b: f64) -> f64 {
        smooth_max2(a, b, self.beta)
    }
}

/// Softmax-weighted mean of `values`.
///
/// The exponents are shifted by `max_i(beta * x_i)` before exponentiation,
/// so nothing overflows for `|beta * x|` well past the naive limit of
/// roughly 710 in `f64` (the shift also covers negative `beta`, where the
/// largest exponent comes from the *smallest* value).
pub fn smooth_max_n<S: Scalar>(values: &[S], beta: S) -> Result<S> {
    if values.is_empty() {
        return Err(Error::Domain("smooth_max_n of an empty list".into()));
    }
    let mut shift = S::neg_infinity();
    for &x in values {
        let e = beta * x;
        if e > shift {
            shift = e;
        }
    }
    let mut num = S::zero();
    let mut den = S::zero();
    for &x in values {
        let w = (beta * x - shift).exp();
        num = num + x * w;
        den = den + w;
    }
    Ok(num / den)
}

/// Two-argument smooth maximum: `(a - b) * sigmoid(beta * (a - b)) + b`.
#[inline]
pub fn smooth_max2<S: Scalar>(a: S, b: S, beta: S) -> S {
    let d = a - b;
    d * sigmoid(beta * d) + b
}

/// Analytic partials of [`smooth_max2`] w.r.t. `(a, b, beta)`.
///
/// With `d = a - b` and `s = sigmoid(beta * d)`:
/// `d/da = s + beta*d*s*(1-s)`, `d/db = 1 - d/da`, `d/dbeta = d^2*s*(1-s)`.
#[inline]
pub fn smooth_max2_grad<S: Scalar>(a: S, b: S, beta: S) -> (S, S, S) {
    let d = a - b;
    let s = sigmoid(beta * d);
    let sp = s * (S::one() - s);
    let da = s + beta * d * sp;
    (da, S::one() - da, d * d * sp)
}
