//! Minimal dense tensor engine.
//!
//! Row-major storage, canonical feature layout `N x C x H x W`
//! (batch, channels, height, width). Rank-2 tensors `N x D` are accepted
//! by channel-indexed ops and treated as `N x D x 1 x 1`.
//!
//! All ops are pure: inputs are read-only, outputs freshly allocated.
//! Reductions run in a fixed order so results are reproducible bit for bit.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Four positive extents naming a batch of feature maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!("Shape4 extents must be >= 1, got {n}x{c}x{h}x{w}")));
        }
        Ok(Shape4 { n, c, h, w })
    }

    pub fn count(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn dims(&self) -> Vec<usize> {
        vec![self.n, self.c, self.h, self.w]
    }
}

/// Dense N-dimensional array of real scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S: Scalar = f64> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    /// Build a tensor from a shape and matching element buffer.
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::Shape(format!("all extents must be >= 1, got {shape:?}")));
        }
        let count: usize = shape.iter().product();
        if count != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} holds {count} elements but {} were supplied",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let count = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![S::zero(); count] }
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        let count = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; count] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> S) -> Self {
        let count: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: (0..count).map(&mut f).collect() }
    }

    /// 1-D tensor from a slice.
    pub fn vector(values: &[S]) -> Self {
        Tensor { shape: vec![values.len()], data: values.to_vec() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    /// Interpret as `N x C x H x W`; rank-2 `N x D` maps to `N x D x 1 x 1`.
    pub fn dims4(&self) -> Result<Shape4> {
        match self.shape.as_slice() {
            [n, c, h, w] => Ok(Shape4 { n: *n, c: *c, h: *h, w: *w }),
            [n, d] => Ok(Shape4 { n: *n, c: *d, h: 1, w: 1 }),
            other => Err(Error::Shape(format!("expected rank 4 (or 2), got {other:?}"))),
        }
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [n, d] => Ok((*n, *d)),
            other => Err(Error::Shape(format!("expected rank 2, got {other:?}"))),
        }
    }

    /// Flat offset of `[n, c, h, w]` under the canonical layout.
    #[inline]
    pub fn offset4(s: Shape4, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * s.c + c) * s.h + h) * s.w + w
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        let count: usize = shape.iter().product();
        if count != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} ({} elems) to {shape:?} ({count} elems)",
                self.shape,
                self.data.len()
            )));
        }
        Ok(Tensor { shape, data: self.data.clone() })
    }

    /// Elementwise map; the output has the same shape.
    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    /// Elementwise combine with another tensor of identical shape.
    pub fn zip_map(&self, other: &Self, f: impl Fn(S, S) -> S) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "zip_map shapes differ: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn scale(&self, factor: S) -> Self {
        self.map(|x| x * factor)
    }

    /// Convert elements to another scalar type.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| T::from_f64(x.f64())).collect(),
        }
    }

    /// Largest absolute elementwise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "max_abs_diff shapes differ: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let mut worst = 0.0f64;
        for (&a, &b) in self.data.iter().zip(&other.data) {
            worst = worst.max((a.f64() - b.f64()).abs());
        }
        Ok(worst)
    }
}

/// `elementwise_map` as a free function, mirroring the tensor method.
pub fn elementwise_map<S: Scalar>(t: &Tensor<S>, f: impl Fn(S) -> S) -> Tensor<S> {
    t.map(f)
}

/// Numerically stable logistic sigmoid.
///
/// For x >= 0 uses `1 / (1 + e^-x)`, otherwise `e^x / (1 + e^x)`, so neither
/// branch exponentiates a positive argument and no overflow occurs anywhere
/// in the dtype's range. NaN propagates.
#[inline]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// Spatial mean per channel: `N x C x H x W -> N x C x 1 x 1`.
pub fn global_avg_pool<S: Scalar>(t: &Tensor<S>) -> Result<Tensor<S>> {
    let s = t.dims4()?;
    let mut out = Tensor::zeros(&[s.n, s.c, 1, 1]);
    let inv = S::from_f64(1.0 / (s.h * s.w) as f64);
    for n in 0..s.n {
        for c in 0..s.c {
            let mut acc = S::zero();
            for h in 0..s.h {
                for w in 0..s.w {
                    acc = acc + t.data[Tensor::<S>::offset4(s, n, c, h, w)];
                }
            }
            out.data[n * s.c + c] = acc * inv;
        }
    }
    Ok(out)
}

/// Scatter an `N x C x 1 x 1` upstream gradient back over the pooled window.
pub fn global_avg_pool_backward<S: Scalar>(
    input_shape: Shape4,
    grad_out: &Tensor<S>,
) -> Result<Tensor<S>> {
    let g = grad_out.dims4()?;
    if g.n != input_shape.n || g.c != input_shape.c || g.h != 1 || g.w != 1 {
        return Err(Error::Shape(format!(
            "global_avg_pool_backward: grad shape {:?} does not match input {:?}",
            grad_out.shape(),
            input_shape.dims()
        )));
    }
    let s = input_shape;
    let inv = S::from_f64(1.0 / (s.h * s.w) as f64);
    let mut out = Tensor::zeros(&s.dims());
    for n in 0..s.n {
        for c in 0..s.c {
            let g = grad_out.data[n * s.c + c] * inv;
            for h in 0..s.h {
                for w in 0..s.w {
                    out.data[Tensor::<S>::offset4(s, n, c, h, w)] = g;
                }
            }
        }
    }
    Ok(out)
}

/// 1x1 convolution: channel mixing at every pixel.
///
/// `weight` is `C_out x C_in`, `bias` (optional) `C_out`.
pub fn pointwise_conv<S: Scalar>(
    t: &Tensor<S>,
    weight: &Tensor<S>,
    bias: Option<&Tensor<S>>,
) -> Result<Tensor<S>> {
    let s = t.dims4()?;
    let (c_out, c_in) = weight.dims2()?;
    if c_in != s.c {
        return Err(Error::Shape(format!(
            "pointwise_conv: weight expects {c_in} input channels, tensor has {}",
            s.c
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [c_out] {
            return Err(Error::Shape(format!(
                "pointwise_conv: bias shape {:?}, expected [{c_out}]",
                b.shape()
            )));
        }
    }
    let os = Shape4 { n: s.n, c: c_out, h: s.h, w: s.w };
    let mut out = Tensor::zeros(&os.dims());
    for n in 0..s.n {
        for o in 0..c_out {
            let b = bias.map_or(S::zero(), |b| b.data[o]);
            for h in 0..s.h {
                for w in 0..s.w {
                    let mut acc = b;
                    for c in 0..s.c {
                        acc = acc
                            + weight.data[o * c_in + c]
                                * t.data[Tensor::<S>::offset4(s, n, c, h, w)];
                    }
                    out.data[Tensor::<S>::offset4(os, n, o, h, w)] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`pointwise_conv`] w.r.t. input, weight, and bias.
pub fn pointwise_conv_backward<S: Scalar>(
    t: &Tensor<S>,
    weight: &Tensor<S>,
    grad_out: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>, Tensor<S>)> {
    let s = t.dims4()?;
    let (c_out, c_in) = weight.dims2()?;
    let gs = grad_out.dims4()?;
    if gs.n != s.n || gs.c != c_out || gs.h != s.h || gs.w != s.w {
        return Err(Error::Shape("pointwise_conv_backward: grad shape mismatch".into()));
    }
    let mut grad_x = Tensor::zeros(t.shape());
    let mut grad_w = Tensor::zeros(weight.shape());
    let mut grad_b = Tensor::zeros(&[c_out]);
    for n in 0..s.n {
        for o in 0..c_out {
            for h in 0..s.h {
                for w in 0..s.w {
                    let g = grad_out.data[Tensor::<S>::offset4(gs, n, o, h, w)];
                    grad_b.data[o] = grad_b.data[o] + g;
                    for c in 0..s.c {
                        let xi = Tensor::<S>::offset4(s, n, c, h, w);
                        grad_x.data[xi] = grad_x.data[xi] + g * weight.data[o * c_in + c];
                        grad_w.data[o * c_in + c] = grad_w.data[o * c_in + c] + g * t.data[xi];
                    }
                }
            }
        }
    }
    Ok((grad_x, grad_w, grad_b))
}

fn check_dw_config(k: usize, stride: usize) -> Result<()> {
    if k % 2 == 0 || k == 0 {
        return Err(Error::Config(format!("depthwise kernel must be odd and >= 1, got {k}")));
    }
    if stride != 1 && stride != 2 {
        return Err(Error::Config(format!("stride must be 1 or 2, got {stride}")));
    }
    Ok(())
}

fn conv_out_extent(extent: usize, k: usize, stride: usize, pad: usize) -> usize {
    (extent + 2 * pad - k) / stride + 1
}

/// Per-channel `k x k` convolution with zero padding.
///
/// `weight` is `C x k x k`; `pad = k/2` keeps spatial extents at stride 1.
pub fn depthwise_conv<S: Scalar>(
    t: &Tensor<S>,
    weight: &Tensor<S>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<S>> {
    let s = t.dims4()?;
    let (c, k) = match weight.shape() {
        [c, k1, k2] if k1 == k2 => (*c, *k1),
        other => {
            return Err(Error::Shape(format!("depthwise weight must be C x k x k, got {other:?}")))
        }
    };
    check_dw_config(k, stride)?;
    if c != s.c {
        return Err(Error::Shape(format!(
            "depthwise_conv: weight has {c} channels, tensor has {}",
            s.c
        )));
    }
    if s.h + 2 * pad < k || s.w + 2 * pad < k {
        return Err(Error::Shape(format!(
            "depthwise_conv: {k}x{k} kernel does not fit {}x{} input with pad {pad}",
            s.h, s.w
        )));
    }
    let oh = conv_out_extent(s.h, k, stride, pad);
    let ow = conv_out_extent(s.w, k, stride, pad);
    let os = Shape4 { n: s.n, c: s.c, h: oh, w: ow };
    let mut out = Tensor::zeros(&os.dims());
    for n in 0..s.n {
        for ch in 0..s.c {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = S::zero();
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (y * stride + ky) as isize - pad as isize;
                            let ix = (x * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= s.h as isize || ix >= s.w as isize {
                                continue;
                            }
                            acc = acc
                                + weight.data[(ch * k + ky) * k + kx]
                                    * t.data[Tensor::<S>::offset4(
                                        s,
                                        n,
                                        ch,
                                        iy as usize,
                                        ix as usize,
                                    )];
                        }
                    }
                    out.data[Tensor::<S>::offset4(os, n, ch, y, x)] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`depthwise_conv`] w.r.t. input and weight.
pub fn depthwise_conv_backward<S: Scalar>(
    t: &Tensor<S>,
    weight: &Tensor<S>,
    stride: usize,
    pad: usize,
    grad_out: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let s = t.dims4()?;
    let k = weight.shape()[1];
    let gs = grad_out.dims4()?;
    let mut grad_x = Tensor::zeros(t.shape());
    let mut grad_w = Tensor::zeros(weight.shape());
    for n in 0..s.n {
        for ch in 0..s.c {
            for y in 0..gs.h {
                for x in 0..gs.w {
                    let g = grad_out.data[Tensor::<S>::offset4(gs, n, ch, y, x)];
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (y * stride + ky) as isize - pad as isize;
                            let ix = (x * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= s.h as isize || ix >= s.w as isize {
                                continue;
                            }
                            let xi = Tensor::<S>::offset4(s, n, ch, iy as usize, ix as usize);
                            let wi = (ch * k + ky) * k + kx;
                            grad_x.data[xi] = grad_x.data[xi] + g * weight.data[wi];
                            grad_w.data[wi] = grad_w.data[wi] + g * t.data[xi];
                        }
                    }
                }
            }
        }
    }
    Ok((grad_x, grad_w))
}

/// Full `k x k` convolution, `weight` is `C_out x C_in x k x k`.
///
/// Only the network stem needs this; everything else is pointwise or
/// depthwise.
pub fn conv2d<S: Scalar>(
    t: &Tensor<S>,
    weight: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<S>> {
    let s = t.dims4()?;
    let (c_out, c_in, k) = match weight.shape() {
        [o, c, k1, k2] if k1 == k2 => (*o, *c, *k1),
        other => {
            return Err(Error::Shape(format!("conv2d weight must be O x C x k x k, got {other:?}")))
        }
    };
    check_dw_config(k, stride)?;
    if c_in != s.c {
        return Err(Error::Shape(format!(
            "conv2d: weight expects {c_in} input channels, tensor has {}",
            s.c
        )));
    }
    let oh = conv_out_extent(s.h, k, stride, pad);
    let ow = conv_out_extent(s.w, k, stride, pad);
    let os = Shape4 { n: s.n, c: c_out, h: oh, w: ow };
    let mut out = Tensor::zeros(&os.dims());
    for n in 0..s.n {
        for o in 0..c_out {
            let b = bias.map_or(S::zero(), |b| b.data[o]);
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = b;
                    for c in 0..s.c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (x * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= s.h as isize || ix >= s.w as isize {
                                    continue;
                                }
                                acc = acc
                                    + weight.data[((o * c_in + c) * k + ky) * k + kx]
                                        * t.data[Tensor::<S>::offset4(
                                            s,
                                            n,
                                            c,
                                            iy as usize,
                                            ix as usize,
                                        )];
                            }
                        }
                    }
                    out.data[Tensor::<S>::offset4(os, n, o, y, x)] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d`] w.r.t. input, weight, and bias.
pub fn conv2d_backward<S: Scalar>(
    t: &Tensor<S>,
    weight: &Tensor<S>,
    stride: usize,
    pad: usize,
    grad_out: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>, Tensor<S>)> {
    let s = t.dims4()?;
    let (c_out, c_in, k) = match weight.shape() {
        [o, c, k1, _] => (*o, *c, *k1),
        _ => unreachable!("validated by forward"),
    };
    let gs = grad_out.dims4()?;
    let mut grad_x = Tensor::zeros(t.shape());
    let mut grad_w = Tensor::zeros(weight.shape());
    let mut grad_b = Tensor::zeros(&[c_out]);
    for n in 0..s.n {
        for o in 0..c_out {
            for y in 0..gs.h {
                for x in 0..gs.w {
                    let g = grad_out.data[Tensor::<S>::offset4(gs, n, o, y, x)];
                    grad_b.data[o] = grad_b.data[o] + g;
                    for c in 0..s.c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (x * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= s.h as isize || ix >= s.w as isize {
                                    continue;
                                }
                                let xi = Tensor::<S>::offset4(s, n, c, iy as usize, ix as usize);
                                let wi = ((o * c_in + c) * k + ky) * k + kx;
                                grad_x.data[xi] = grad_x.data[xi] + g * weight.data[wi];
                                grad_w.data[wi] = grad_w.data[wi] + g * t.data[xi];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((grad_x, grad_w, grad_b))
}

/// Max pooling with zero padding; returns the pooled tensor and the flat
/// input offset of each window maximum (for the backward scatter).
///
/// Padded positions never win a window: real elements are preferred, and an
/// all-padding window (impossible for the configs used here) would yield 0.
pub fn max_pool_with_indices<S: Scalar>(
    t: &Tensor<S>,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Result<(Tensor<S>, Vec<usize>)> {
    let s = t.dims4()?;
    if kernel == 0 || stride == 0 {
        return Err(Error::Config("max_pool kernel and stride must be >= 1".into()));
    }
    if s.h + 2 * pad < kernel || s.w + 2 * pad < kernel {
        return Err(Error::Shape(format!(
            "max_pool: {kernel}x{kernel} window does not fit {}x{} input with pad {pad}",
            s.h, s.w
        )));
    }
    let oh = conv_out_extent(s.h, kernel, stride, pad);
    let ow = conv_out_extent(s.w, kernel, stride, pad);
    let os = Shape4 { n: s.n, c: s.c, h: oh, w: ow };
    let mut out = Tensor::zeros(&os.dims());
    let mut indices = vec![0usize; os.count()];
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..oh {
                for x in 0..ow {
                    let mut best = S::neg_infinity();
                    let mut best_idx = usize::MAX;
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            let iy = (y * stride + ky) as isize - pad as isize;
                            let ix = (x * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= s.h as isize || ix >= s.w as isize {
                                continue;
                            }
                            let xi = Tensor::<S>::offset4(s, n, c, iy as usize, ix as usize);
                            if t.data[xi] > best || best_idx == usize::MAX {
                                best = t.data[xi];
                                best_idx = xi;
                            }
                        }
                    }
                    let oi = Tensor::<S>::offset4(os, n, c, y, x);
                    out.data[oi] = if best_idx == usize::MAX { S::zero() } else { best };
                    indices[oi] = best_idx;
                }
            }
        }
    }
    Ok((out, indices))
}

/// Max pooling without the index side channel.
pub fn max_pool<S: Scalar>(
    t: &Tensor<S>,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Result<Tensor<S>> {
    Ok(max_pool_with_indices(t, kernel, stride, pad)?.0)
}

/// The 2x2 stride-2 window used outside of downsampling blocks.
pub fn max_pool2<S: Scalar>(t: &Tensor<S>) -> Result<Tensor<S>> {
    max_pool(t, 2, 2, 0)
}

/// Scatter the upstream gradient back to each window's argmax.
pub fn max_pool_backward<S: Scalar>(
    input_shape: &[usize],
    indices: &[usize],
    grad_out: &Tensor<S>,
) -> Result<Tensor<S>> {
    if indices.len() != grad_out.len() {
        return Err(Error::Shape("max_pool_backward: index count != grad elements".into()));
    }
    let mut grad_x = Tensor::zeros(input_shape);
    for (&idx, &g) in indices.iter().zip(grad_out.data()) {
        if idx != usize::MAX {
            grad_x.data[idx] = grad_x.data[idx] + g;
        }
    }
    Ok(grad_x)
}

/// Affine map per row: `out[n, o] = sum_d weight[o, d] * t[n, d] + bias[o]`.
pub fn dense<S: Scalar>(
    t: &Tensor<S>,
    weight: &Tensor<S>,
    bias: Option<&Tensor<S>>,
) -> Result<Tensor<S>> {
    let (n, d) = t.dims2()?;
    let (d_out, d_in) = weight.dims2()?;
    if d_in != d {
        return Err(Error::Shape(format!(
            "dense: weight expects {d_in} inputs, tensor rows have {d}"
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [d_out] {
            return Err(Error::Shape(format!(
                "dense: bias shape {:?}, expected [{d_out}]",
                b.shape()
            )));
        }
    }
    let mut out = Tensor::zeros(&[n, d_out]);
    for row in 0..n {
        for o in 0..d_out {
            let mut acc = bias.map_or(S::zero(), |b| b.data[o]);
            for i in 0..d {
                acc = acc + weight.data[o * d_in + i] * t.data[row * d + i];
            }
            out.data[row * d_out + o] = acc;
        }
    }
    Ok(out)
}

/// Gradients of [`dense`] w.r.t. input, weight, and bias.
pub fn dense_backward<S: Scalar>(
    t: &Tensor<S>,
    weight: &Tensor<S>,
    grad_out: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>, Tensor<S>)> {
    let (n, d) = t.dims2()?;
    let (d_out, _) = weight.dims2()?;
    let (gn, gd) = grad_out.dims2()?;
    if gn != n || gd != d_out {
        return Err(Error::Shape("dense_backward: grad shape mismatch".into()));
    }
    let mut grad_x = Tensor::zeros(t.shape());
    let mut grad_w = Tensor::zeros(weight.shape());
    let mut grad_b = Tensor::zeros(&[d_out]);
    for row in 0..n {
        for o in 0..d_out {
            let g = grad_out.data[row * d_out + o];
            grad_b.data[o] = grad_b.data[o] + g;
            for i in 0..d {
                grad_x.data[row * d + i] = grad_x.data[row * d + i] + g * weight.data[o * d + i];
                grad_w.data[o * d + i] = grad_w.data[o * d + i] + g * t.data[row * d + i];
            }
        }
    }
    Ok((grad_x, grad_w, grad_b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{rng, uniform_tensor};

    #[test]
    fn map_identity_and_zero() {
        let t = Tensor::<f64>::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(t.map(|x| x).data(), &[1.0, 2.0, 3.0]);
        assert_eq!(t.map(|_| 0.0).data(), &[0.0, 0.0, 0.0]);
        assert_eq!(t.map(sigmoid).shape(), t.shape());
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        // saturates without overflow
        assert_eq!(sigmoid(1000.0f64), 1.0);
        assert_eq!(sigmoid(-1000.0f64), 0.0);
        assert!((sigmoid(1.0f64) - 0.7310585786300049).abs() < 1e-15);
        assert!(sigmoid(f64::NAN).is_nan());
    }

    #[test]
    fn sigmoid_complement_identity() {
        let mut x = -50.0f64;
        while x <= 50.0 {
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() <= 1e-15, "x = {x}");
            x += 0.25;
        }
    }

    #[test]
    fn gap_constant_and_mean() {
        let t = Tensor::<f64>::full(&[2, 3, 4, 4], 2.5);
        let out = global_avg_pool(&t).unwrap();
        assert_eq!(out.shape(), &[2, 3, 1, 1]);
        assert!(out.data().iter().all(|&v| v == 2.5));

        let t = Tensor::<f64>::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(global_avg_pool(&t).unwrap().data(), &[2.5]);

        // H = W = 1 passes values through
        let t = Tensor::<f64>::new(vec![1, 2, 1, 1], vec![7.0, -3.0]).unwrap();
        assert_eq!(global_avg_pool(&t).unwrap().data(), &[7.0, -3.0]);
    }

    #[test]
    fn gap_rejects_wrong_rank() {
        let t = Tensor::<f64>::zeros(&[2, 2, 2]);
        assert!(global_avg_pool(&t).is_err());
    }

    #[test]
    fn pointwise_identity_and_sum() {
        let x = Tensor::<f64>::new(vec![1, 2, 1, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let eye = Tensor::<f64>::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(pointwise_conv(&x, &eye, None).unwrap().data(), x.data());

        let sum = Tensor::<f64>::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
        let out = pointwise_conv(&x, &sum, None).unwrap();
        assert_eq!(out.data(), &[8.0, 10.0]);
    }

    #[test]
    fn pointwise_channel_mismatch_errors() {
        let x = Tensor::<f64>::zeros(&[1, 3, 2, 2]);
        let w = Tensor::<f64>::zeros(&[4, 2]);
        assert!(matches!(pointwise_conv(&x, &w, None), Err(Error::Shape(_))));
    }

    // brute-force oracle: direct summation with no layout tricks
    fn pointwise_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let s = x.dims4().unwrap();
        let (co, ci) = w.dims2().unwrap();
        let mut out = Tensor::zeros(&[s.n, co, s.h, s.w]);
        for n in 0..s.n {
            for o in 0..co {
                for h in 0..s.h {
                    for ww in 0..s.w {
                        let mut acc = b.data()[o];
                        for c in 0..s.c {
                            acc += w.data()[o * ci + c]
                                * x.data()[((n * s.c + c) * s.h + h) * s.w + ww];
                        }
                        out.data_mut()[((n * co + o) * s.h + h) * s.w + ww] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn pointwise_matches_loop_oracle() {
        let mut r = rng(11);
        let x = uniform_tensor(&[2, 8, 16, 16], &mut r);
        let w = uniform_tensor(&[5, 8], &mut r);
        let b = uniform_tensor(&[5], &mut r);
        let got = pointwise_conv(&x, &w, Some(&b)).unwrap();
        let want = pointwise_oracle(&x, &w, &b);
        assert!(got.max_abs_diff(&want).unwrap() <= 1e-12);
    }

    #[test]
    fn depthwise_delta_kernel_is_identity() {
        let mut r = rng(3);
        let x = uniform_tensor(&[1, 3, 5, 5], &mut r);
        let mut w = Tensor::<f64>::zeros(&[3, 3, 3]);
        for c in 0..3 {
            w.data_mut()[(c * 3 + 1) * 3 + 1] = 1.0;
        }
        let out = depthwise_conv(&x, &w, 1, 1).unwrap();
        assert!(out.max_abs_diff(&x).unwrap() == 0.0);
    }

    #[test]
    fn depthwise_box_kernel_interior() {
        let x = Tensor::<f64>::full(&[1, 1, 5, 5], 1.0);
        let w = Tensor::<f64>::full(&[1, 3, 3], 1.0);
        let out = depthwise_conv(&x, &w, 1, 1).unwrap();
        // interior pixel sees the whole 3x3 window
        assert_eq!(out.data()[2 * 5 + 2], 9.0);
        // corner sees only 2x2 of it
        assert_eq!(out.data()[0], 4.0);
    }

    #[test]
    fn depthwise_rejects_even_kernel_and_bad_stride() {
        let x = Tensor::<f64>::zeros(&[1, 1, 4, 4]);
        let w = Tensor::<f64>::zeros(&[1, 2, 2]);
        assert!(matches!(depthwise_conv(&x, &w, 1, 0), Err(Error::Config(_))));
        let w = Tensor::<f64>::zeros(&[1, 3, 3]);
        assert!(matches!(depthwise_conv(&x, &w, 3, 1), Err(Error::Config(_))));
    }

    fn depthwise_oracle(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let s = x.dims4().unwrap();
        let k = w.shape()[1];
        let oh = (s.h + 2 * pad - k) / stride + 1;
        let ow = (s.w + 2 * pad - k) / stride + 1;
        let mut out = Tensor::zeros(&[s.n, s.c, oh, ow]);
        for n in 0..s.n {
            for c in 0..s.c {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut acc = 0.0;
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xx * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < s.h && (ix as usize) < s.w
                                {
                                    acc += w.data()[(c * k + ky) * k + kx]
                                        * x.data()[((n * s.c + c) * s.h + iy as usize) * s.w
                                            + ix as usize];
                                }
                            }
                        }
                        out.data_mut()[((n * s.c + c) * oh + y) * ow + xx] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn depthwise_matches_loop_oracle() {
        let mut r = rng(17);
        for &(stride, pad) in &[(1usize, 1usize), (2, 1)] {
            let x = uniform_tensor(&[2, 4, 9, 7], &mut r);
            let w = uniform_tensor(&[4, 3, 3], &mut r);
            let got = depthwise_conv(&x, &w, stride, pad).unwrap();
            let want = depthwise_oracle(&x, &w, stride, pad);
            assert!(got.max_abs_diff(&want).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn max_pool_basics() {
        let t = Tensor::<f64>::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(max_pool2(&t).unwrap().data(), &[4.0]);

        let t = Tensor::<f64>::full(&[1, 2, 4, 4], 3.0);
        let out = max_pool2(&t).unwrap();
        assert_eq!(out.shape(), &[1, 2, 2, 2]);
        assert!(out.data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn max_pool_3x3s2_matches_dw_extents() {
        // downsampling pool must agree spatially with a stride-2 depthwise conv
        let x = Tensor::<f64>::zeros(&[1, 2, 8, 8]);
        let pooled = max_pool(&x, 3, 2, 1).unwrap();
        let w = Tensor::<f64>::zeros(&[2, 3, 3]);
        let conved = depthwise_conv(&x, &w, 2, 1).unwrap();
        assert_eq!(pooled.shape(), conved.shape());
    }

    #[test]
    fn max_pool_matches_loop_oracle() {
        let mut r = rng(23);
        let x = uniform_tensor(&[2, 3, 6, 6], &mut r);
        let got = max_pool2(&x).unwrap();
        let s = x.dims4().unwrap();
        for n in 0..2 {
            for c in 0..3 {
                for y in 0..3 {
                    for xx in 0..3 {
                        let mut best = f64::NEG_INFINITY;
                        for ky in 0..2 {
                            for kx in 0..2 {
                                best = best.max(
                                    x.data()
                                        [Tensor::<f64>::offset4(s, n, c, 2 * y + ky, 2 * xx + kx)],
                                );
                            }
                        }
                        let os = got.dims4().unwrap();
                        assert_eq!(got.data()[Tensor::<f64>::offset4(os, n, c, y, xx)], best);
                    }
                }
            }
        }
    }

    #[test]
    fn dense_identity_and_affine() {
        let x = Tensor::<f64>::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
        let eye = Tensor::<f64>::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let zero = Tensor::<f64>::zeros(&[2]);
        assert_eq!(dense(&x, &eye, Some(&zero)).unwrap().data(), x.data());

        let w = Tensor::<f64>::new(vec![1, 2], vec![2.0, 3.0]).unwrap();
        let b = Tensor::<f64>::new(vec![1], vec![1.0]).unwrap();
        assert_eq!(dense(&x, &w, Some(&b)).unwrap().data(), &[6.0]);
    }

    #[test]
    fn dense_matches_loop_oracle() {
        let mut r = rng(29);
        let x = uniform_tensor(&[4, 7], &mut r);
        let w = uniform_tensor(&[3, 7], &mut r);
        let b = uniform_tensor(&[3], &mut r);
        let got = dense(&x, &w, Some(&b)).unwrap();
        for n in 0..4 {
            for o in 0..3 {
                let mut acc = b.data()[o];
                for i in 0..7 {
                    acc += w.data()[o * 7 + i] * x.data()[n * 7 + i];
                }
                assert!((got.data()[n * 3 + o] - acc).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn invalid_shapes_rejected() {
        assert!(Tensor::<f64>::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::<f64>::new(vec![2, 2], vec![1.0]).is_err());
        let x = Tensor::<f64>::zeros(&[2, 3]);
        let w = Tensor::<f64>::zeros(&[4, 2]);
        assert!(dense(&x, &w, None).is_err());
    }
}
