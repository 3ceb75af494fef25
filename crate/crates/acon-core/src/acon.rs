//! The ACON activation family.
//!
//! Every member is a smooth maximum of two linear branches
//! `eta_a(x) = p1*x`, `eta_b(x) = p2*x`:
//!
//! * ACON-A (Swish): `p1 = 1, p2 = 0`, so `f(x) = x * sigmoid(beta*x)`.
//! * ACON-B (smoothed PReLU): `p1 = 1, p2 = p`.
//! * ACON-C: both slopes free, `f(x) = (p1-p2)*x*sigmoid(beta*(p1-p2)*x) + p2*x`.
//!
//! The first derivative of ACON-C asymptotes to `p1` (x -> +inf) and `p2`
//! (x -> -inf) and, for `beta > 0`, attains its extrema where
//! `(y - 2) e^y = y + 2` with `y = (p1-p2)*beta*x`. [`derivative_bounds`]
//! solves that equation at startup rather than hard-coding the root.
//!
//! ACON-FReLU swaps the linear branches for a spatial condition: `eta_a` is
//! the identity (or a 3x3/s2 max pool when downsampling) and `eta_b` a
//! depthwise 3x3 convolution.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::smoothmax::smooth_max2;
use crate::tensor::{
    depthwise_conv, depthwise_conv_backward, max_pool_backward, max_pool_with_indices, sigmoid,
    Shape4, Tensor,
};
use crate::verify::root_solver;

/// Which member of the family a layer evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum AconKind {
    A,
    B,
    C,
}

/// Per-channel learnable triple `(p1, p2, beta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AconParams<S: Scalar = f64> {
    pub p1: Tensor<S>,
    pub p2: Tensor<S>,
    pub beta: Tensor<S>,
}

impl<S: Scalar> AconParams<S> {
    pub fn new(p1: Tensor<S>, p2: Tensor<S>, beta: Tensor<S>) -> Result<Self> {
        if p1.rank() != 1 || p1.shape() != p2.shape() || p1.shape() != beta.shape() {
            return Err(Error::Shape(format!(
                "AconParams extents differ: p1 {:?}, p2 {:?}, beta {:?}",
                p1.shape(),
                p2.shape(),
                beta.shape()
            )));
        }
        for t in [&p1, &p2, &beta] {
            if t.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain("AconParams must be finite".into()));
            }
        }
        Ok(AconParams { p1, p2, beta })
    }

    /// Default initialisation: `p1 = 1`, `p2 = 0`, `beta = 1`.
    pub fn init(channels: usize) -> Self {
        AconParams {
            p1: Tensor::full(&[channels], S::one()),
            p2: Tensor::zeros(&[channels]),
            beta: Tensor::full(&[channels], S::one()),
        }
    }

    /// ACON-B initialisation: the PReLU slope starts at 0.25.
    pub fn init_b(channels: usize) -> Self {
        AconParams {
            p1: Tensor::full(&[channels], S::one()),
            p2: Tensor::full(&[channels], S::from_f64(0.25)),
            beta: Tensor::full(&[channels], S::one()),
        }
    }

    pub fn channels(&self) -> usize {
        self.p1.len()
    }
}

fn check_channels<S: Scalar>(x: &Tensor<S>, channels: usize, what: &str) -> Result<Shape4> {
    let s = x.dims4()?;
    if s.c != channels {
        return Err(Error::Shape(format!(
            "{what}: input has {} channels, parameters have {channels}",
            s.c
        )));
    }
    Ok(s)
}

/// Apply `f(x_value, channel_params...)` over a channel-broadcast tensor.
fn per_channel_map<S: Scalar>(
    x: &Tensor<S>,
    s: Shape4,
    f: impl Fn(S, usize) -> S,
) -> Tensor<S> {
    let plane = s.h * s.w;
    let mut out = Tensor::zeros(x.shape());
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * plane;
            for i in 0..plane {
                out.data_mut()[base + i] = f(x.data()[base + i], c);
            }
        }
    }
    out
}

/// ACON-A (Swish): `x * sigmoid(beta_c * x)` with channel-broadcast `beta`.
pub fn acon_a<S: Scalar>(x: &Tensor<S>, beta: &Tensor<S>) -> Result<Tensor<S>> {
    let s = check_channels(x, beta.len(), "acon_a")?;
    Ok(per_channel_map(x, s, |v, c| v * sigmoid(beta.data()[c] * v)))
}

/// ACON-B: `(1-p)*x*sigmoid(beta*(1-p)*x) + p*x`.
pub fn acon_b<S: Scalar>(x: &Tensor<S>, p: &Tensor<S>, beta: &Tensor<S>) -> Result<Tensor<S>> {
    if p.shape() != beta.shape() {
        return Err(Error::Shape("acon_b: p and beta extents differ".into()));
    }
    let s = check_channels(x, p.len(), "acon_b")?;
    Ok(per_channel_map(x, s, |v, c| smooth_max2(v, p.data()[c] * v, beta.data()[c])))
}

/// ACON-C: `(p1-p2)*x*sigmoid(beta*(p1-p2)*x) + p2*x`.
pub fn acon_c<S: Scalar>(x: &Tensor<S>, params: &AconParams<S>) -> Result<Tensor<S>> {
    let s = check_channels(x, params.channels(), "acon_c")?;
    Ok(per_channel_map(x, s, |v, c| {
        smooth_max2(params.p1.data()[c] * v, params.p2.data()[c] * v, params.beta.data()[c])
    }))
}

/// First derivative of ACON-C at a point.
///
/// Uses the cancellation-free form `d*s + beta*d^2*x*s*(1-s) + p2` with
/// `d = p1 - p2`, `s = sigmoid(beta*d*x)`; equal to the two-fraction form it
/// was derived from (a regression test asserts this to 1e-12).
#[inline]
pub fn acon_c_dx<S: Scalar>(x: S, p1: S, p2: S, beta: S) -> S {
    let d = p1 - p2;
    let y = beta * d * x;
    let s = sigmoid(y);
    d * s + d * y * s * (S::one() - s) + p2
}

/// Second derivative of ACON-C at a point.
///
/// With `y = beta*(p1-p2)*x`, evaluates
/// `beta*(p1-p2)^2 * [(2-y)*s(y)^2*s(-y) + (y+2)*s(y)*s(-y)^2]`,
/// the overflow-free rearrangement of the single-fraction form (which blows
/// up once `e^y` leaves the dtype range; the sigmoid products decay to the
/// true limit 0 instead).
#[inline]
pub fn acon_c_dxx<S: Scalar>(x: S, p1: S, p2: S, beta: S) -> S {
    let d = p1 - p2;
    let y = beta * d * x;
    let sp = sigmoid(y);
    let sn = sigmoid(-y);
    beta * d * d * ((S::two() - y) * sp * sp * sn + (y + S::two()) * sp * sn * sn)
}

/// Extrema of the first derivative of ACON-C, and where they sit.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct DerivativeBounds {
    pub upper: f64,
    pub lower: f64,
    pub x_at_upper: f64,
    pub x_at_lower: f64,
    /// Positive root of `(y - 2) e^y = y + 2`, `y = (p1-p2)*beta*x`.
    pub root_y: f64,
}

/// Solve for the first-derivative extrema of ACON-C.
///
/// Requires `beta > 0` and `p1 != p2`; the extremum locations diverge
/// otherwise. The bound *values* depend only on `p1` and `p2`
/// (approximately `1.0998*p1 - 0.0998*p2` and `1.0998*p2 - 0.0998*p1`);
/// `beta` only moves where they are attained.
pub fn derivative_bounds(p1: f64, p2: f64, beta: f64) -> Result<DerivativeBounds> {
    if beta <= 0.0 {
        return Err(Error::Domain(format!("derivative_bounds requires beta > 0, got {beta}")));
    }
    if p1 == p2 {
        return Err(Error::Domain(
            "derivative_bounds requires p1 != p2 (derivative is constant otherwise)".into(),
        ));
    }
    let root_y = root_solver();
    let d = p1 - p2;
    let x_plus = root_y / (d * beta);
    let x_minus = -root_y / (d * beta);
    let v_plus = acon_c_dx(x_plus, p1, p2, beta);
    let v_minus = acon_c_dx(x_minus, p1, p2, beta);
    let (upper, x_at_upper, lower, x_at_lower) = if v_plus >= v_minus {
        (v_plus, x_plus, v_minus, x_minus)
    } else {
        (v_minus, x_minus, v_plus, x_plus)
    };
    Ok(DerivativeBounds { upper, lower, x_at_upper, x_at_lower, root_y })
}

/// Gradients produced by [`acon_c_backward`].
#[derive(Debug, Clone)]
pub struct AconGrads<S: Scalar> {
    pub x: Tensor<S>,
    pub p1: Tensor<S>,
    pub p2: Tensor<S>,
    pub beta: Tensor<S>,
}

/// Chain rule through ACON-C.
///
/// `grad_x` is elementwise `grad_out * df/dx`; the per-channel parameter
/// gradients reduce-sum over batch and space in a fixed order:
/// `df/dp1 = x*s + beta*d*x^2*s*(1-s)`,
/// `df/dp2 = x*(1-s) - beta*d*x^2*s*(1-s)`,
/// `df/dbeta = d^2*x^2*s*(1-s)`.
pub fn acon_c_backward<S: Scalar>(
    x: &Tensor<S>,
    params: &AconParams<S>,
    grad_out: &Tensor<S>,
) -> Result<AconGrads<S>> {
    let s4 = check_channels(x, params.channels(), "acon_c_backward")?;
    if grad_out.shape() != x.shape() {
        return Err(Error::Shape("acon_c_backward: grad_out shape differs from x".into()));
    }
    let plane = s4.h * s4.w;
    let mut grad_x = Tensor::zeros(x.shape());
    let mut grad_p1 = Tensor::zeros(&[s4.c]);
    let mut grad_p2 = Tensor::zeros(&[s4.c]);
    let mut grad_beta = Tensor::zeros(&[s4.c]);
    for n in 0..s4.n {
        for c in 0..s4.c {
            let p1 = params.p1.data()[c];
            let p2 = params.p2.data()[c];
            let beta = params.beta.data()[c];
            let d = p1 - p2;
            let base = (n * s4.c + c) * plane;
            let mut gp1 = S::zero();
            let mut gp2 = S::zero();
            let mut gb = S::zero();
            for i in 0..plane {
                let xv = x.data()[base + i];
                let go = grad_out.data()[base + i];
                let y = beta * d * xv;
                let s = sigmoid(y);
                let sp = s * (S::one() - s);
                grad_x.data_mut()[base + i] =
                    go * (d * s + d * y * sp + p2);
                let bdx2 = beta * d * xv * xv;
                gp1 = gp1 + go * (xv * s + bdx2 * sp);
                gp2 = gp2 + go * (xv * (S::one() - s) - bdx2 * sp);
                gb = gb + go * (d * d * xv * xv * sp);
            }
            grad_p1.data_mut()[c] = grad_p1.data()[c] + gp1;
            grad_p2.data_mut()[c] = grad_p2.data()[c] + gp2;
            grad_beta.data_mut()[c] = grad_beta.data()[c] + gb;
        }
    }
    Ok(AconGrads { x: grad_x, p1: grad_p1, p2: grad_p2, beta: grad_beta })
}

/// Intermediate state an ACON-FReLU forward pass hands to its backward pass.
#[derive(Debug, Clone)]
pub struct FreluCache<S: Scalar> {
    pub branch_a: Tensor<S>,
    pub branch_b: Tensor<S>,
    /// Argmax offsets when `branch_a` came from the downsampling pool.
    pub pool_indices: Option<Vec<usize>>,
}

fn check_frelu_weight<S: Scalar>(x: &Tensor<S>, dw_weight: &Tensor<S>, beta: &Tensor<S>) -> Result<Shape4> {
    let s = x.dims4()?;
    match dw_weight.shape() {
        [c, 3, 3] if *c == s.c => {}
        other => {
            return Err(Error::Config(format!(
                "acon_frelu expects a {}x3x3 depthwise weight, got {other:?}",
                s.c
            )))
        }
    }
    if beta.len() != s.c {
        return Err(Error::Shape(format!(
            "acon_frelu: beta has {} channels, input has {}",
            beta.len(),
            s.c
        )));
    }
    Ok(s)
}

/// ACON-FReLU forward pass with cached branches.
///
/// Standard form: `smooth_max2(x, dw3x3(x), beta)`.
/// Downsampling form: `smooth_max2(maxpool3x3/s2(x), dw3x3/s2(x), beta)`;
/// both branches use pad 1 so their extents agree by construction.
pub fn acon_frelu_cached<S: Scalar>(
    x: &Tensor<S>,
    dw_weight: &Tensor<S>,
    beta: &Tensor<S>,
    downsample: bool,
) -> Result<(Tensor<S>, FreluCache<S>)> {
    let s = check_frelu_weight(x, dw_weight, beta)?;
    let (branch_a, pool_indices, branch_b) = if downsample {
        let (pooled, idx) = max_pool_with_indices(x, 3, 2, 1)?;
        let conved = depthwise_conv(x, dw_weight, 2, 1)?;
        (pooled, Some(idx), conved)
    } else {
        (x.clone(), None, depthwise_conv(x, dw_weight, 1, 1)?)
    };
    debug_assert_eq!(branch_a.shape(), branch_b.shape());
    let os = branch_a.dims4()?;
    let out = {
        let plane = os.h * os.w;
        let mut out = Tensor::zeros(branch_a.shape());
        for n in 0..os.n {
            for c in 0..os.c {
                let b = beta.data()[c];
                let base = (n * os.c + c) * plane;
                for i in 0..plane {
                    out.data_mut()[base + i] =
                        smooth_max2(branch_a.data()[base + i], branch_b.data()[base + i], b);
                }
            }
        }
        out
    };
    let _ = s;
    Ok((out, FreluCache { branch_a, branch_b, pool_indices }))
}

/// ACON-FReLU forward pass.
pub fn acon_frelu<S: Scalar>(
    x: &Tensor<S>,
    dw_weight: &Tensor<S>,
    beta: &Tensor<S>,
    downsample: bool,
) -> Result<Tensor<S>> {
    Ok(acon_frelu_cached(x, dw_weight, beta, downsample)?.0)
}

/// Gradients produced by [`acon_frelu_backward`].
#[derive(Debug, Clone)]
pub struct FreluGrads<S: Scalar> {
    pub x: Tensor<S>,
    pub dw_weight: Tensor<S>,
    pub beta: Tensor<S>,
}

/// Chain rule through ACON-FReLU using the cached branches.
pub fn acon_frelu_backward<S: Scalar>(
    x: &Tensor<S>,
    dw_weight: &Tensor<S>,
    beta: &Tensor<S>,
    downsample: bool,
    cache: &FreluCache<S>,
    grad_out: &Tensor<S>,
) -> Result<FreluGrads<S>> {
    let s = check_frelu_weight(x, dw_weight, beta)?;
    if grad_out.shape() != cache.branch_a.shape() {
        return Err(Error::Shape("acon_frelu_backward: grad_out shape mismatch".into()));
    }
    let os = cache.branch_a.dims4()?;
    let plane = os.h * os.w;
    let mut grad_a = Tensor::zeros(cache.branch_a.shape());
    let mut grad_b = Tensor::zeros(cache.branch_b.shape());
    let mut grad_beta = Tensor::zeros(&[s.c]);
    for n in 0..os.n {
        for c in 0..os.c {
            let bv = beta.data()[c];
            let base = (n * os.c + c) * plane;
            let mut gb = S::zero();
            for i in 0..plane {
                let a = cache.branch_a.data()[base + i];
                let b = cache.branch_b.data()[base + i];
                let go = grad_out.data()[base + i];
                let d = a - b;
                let sg = sigmoid(bv * d);
                let sp = sg * (S::one() - sg);
                let da = sg + bv * d * sp;
                grad_a.data_mut()[base + i] = go * da;
                grad_b.data_mut()[base + i] = go * (S::one() - da);
                gb = gb + go * d * d * sp;
            }
            grad_beta.data_mut()[c] = grad_beta.data()[c] + gb;
        }
    }
    // branch b is always the depthwise convolution
    let (stride, pad) = if downsample { (2, 1) } else { (1, 1) };
    let (gx_b, gw) = depthwise_conv_backward(x, dw_weight, stride, pad, &grad_b)?;
    // branch a is the identity or the pooling scatter
    let mut grad_x = if downsample {
        let idx = cache
            .pool_indices
            .as_ref()
            .ok_or_else(|| Error::Usage("downsampling cache lacks pool indices".into()))?;
        max_pool_backward(x.shape(), idx, &grad_a)?
    } else {
        grad_a
    };
    grad_x = grad_x.add(&gx_b)?;
    Ok(FreluGrads { x: grad_x, dw_weight: gw, beta: grad_beta })
}
