//! Forward and adjoint kernels for the operator set the estimator needs.
//!
//! Every function here is pure: inputs are borrowed, outputs are freshly
//! allocated, and identical inputs give bit-identical outputs. The heavy
//! convolution kernels parallelize over independent output planes, which
//! keeps per-element summation order fixed regardless of thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Output spatial extent of a strided, zero-padded convolution.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride < 1 {
        return Err(Error::Argument(format!("stride must be >= 1, got {stride}")));
    }
    let padded = input + 2 * pad;
    if padded < kernel {
        return Err(Error::Dimension(format!(
            "kernel {kernel} exceeds padded input extent {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

fn check_bias<T: Scalar>(b: &Tensor<T>, c_out: usize) -> Result<()> {
    let s = b.shape();
    if s != Shape::new(1, c_out, 1, 1) {
        return Err(Error::Dimension(format!(
            "bias shape {s} does not match {c_out} output channels"
        )));
    }
    Ok(())
}

/// Strided cross-correlation with zero padding and optional per-channel bias.
///
/// `x` is `N x C_in x H x W`, `weight` is `C_out x C_in x k x k`.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let xs = x.shape();
    let ws = weight.shape();
    if xs.c != ws.c {
        return Err(Error::Dimension(format!(
            "conv2d: input has {} channels but weight expects {}",
            xs.c, ws.c
        )));
    }
    if let Some(b) = bias {
        check_bias(b, ws.n)?;
    }
    let oh = conv_out_extent(xs.h, ws.h, stride, pad)?;
    let ow = conv_out_extent(xs.w, ws.w, stride, pad)?;
    let out_shape = Shape::new(xs.n, ws.n, oh, ow);

    let xd = x.data();
    let wd = weight.data();
    let mut out = vec![T::zero(); out_shape.count()];
    // One task per (batch, output-channel) plane.
    out.par_chunks_mut(oh * ow).enumerate().for_each(|(plane, yp)| {
        let n = plane / ws.n;
        let co = plane % ws.n;
        let b = bias.map(|b| b.data()[co]).unwrap_or_else(T::zero);
        for v in yp.iter_mut() {
            *v = b;
        }
        for ci in 0..xs.c {
            let x_base = (n * xs.c + ci) * xs.h * xs.w;
            let w_base = (co * ws.c + ci) * ws.h * ws.w;
            for kh in 0..ws.h {
                for kw in 0..ws.w {
                    let wv = wd[w_base + kh * ws.w + kw];
                    for oy in 0..oh {
                        let iy = (oy * stride + kh) as isize - pad as isize;
                        if iy < 0 || iy >= xs.h as isize {
                            continue;
                        }
                        let row = x_base + iy as usize * xs.w;
                        let yrow = oy * ow;
                        for ox in 0..ow {
                            let ix = (ox * stride + kw) as isize - pad as isize;
                            if ix < 0 || ix >= xs.w as isize {
                                continue;
                            }
                            yp[yrow + ox] += xd[row + ix as usize] * wv;
                        }
                    }
                }
            }
        }
    });
    let t = Tensor::from_vec(out_shape, out)?;
    t.ensure_finite("conv2d")?;
    Ok(t)
}

/// Gradient of `conv2d` with respect to its input.
pub fn conv2d_grad_input<T: Scalar>(
    gy: &Tensor<T>,
    weight: &Tensor<T>,
    input_shape: Shape,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let gs = gy.shape();
    let ws = weight.shape();
    let gyd = gy.data();
    let wd = weight.data();
    let mut gx = vec![T::zero(); input_shape.count()];
    gx.par_chunks_mut(input_shape.h * input_shape.w)
        .enumerate()
        .for_each(|(plane, gxp)| {
            let n = plane / input_shape.c;
            let ci = plane % input_shape.c;
            for co in 0..ws.n {
                let gy_base = (n * gs.c + co) * gs.h * gs.w;
                let w_base = (co * ws.c + ci) * ws.h * ws.w;
                for kh in 0..ws.h {
                    for kw in 0..ws.w {
                        let wv = wd[w_base + kh * ws.w + kw];
                        for oy in 0..gs.h {
                            let iy = (oy * stride + kh) as isize - pad as isize;
                            if iy < 0 || iy >= input_shape.h as isize {
                                continue;
                            }
                            let grow = gy_base + oy * gs.w;
                            let xrow = iy as usize * input_shape.w;
                            for ox in 0..gs.w {
                                let ix = (ox * stride + kw) as isize - pad as isize;
                                if ix < 0 || ix >= input_shape.w as isize {
                                    continue;
                                }
                                gxp[xrow + ix as usize] += gyd[grow + ox] * wv;
                            }
                        }
                    }
                }
            }
        });
    Tensor::from_vec(input_shape, gx)
}

/// Gradient of `conv2d` with respect to its weight.
pub fn conv2d_grad_weight<T: Scalar>(
    x: &Tensor<T>,
    gy: &Tensor<T>,
    weight_shape: Shape,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let xs = x.shape();
    let gs = gy.shape();
    let xd = x.data();
    let gyd = gy.data();
    let mut gw = vec![T::zero(); weight_shape.count()];
    gw.par_chunks_mut(weight_shape.c * weight_shape.h * weight_shape.w)
        .enumerate()
        .for_each(|(co, gwp)| {
            for ci in 0..weight_shape.c {
                for kh in 0..weight_shape.h {
                    for kw in 0..weight_shape.w {
                        let mut acc = T::zero();
                        for n in 0..xs.n {
                            let x_base = (n * xs.c + ci) * xs.h * xs.w;
                            let gy_base = (n * gs.c + co) * gs.h * gs.w;
                            for oy in 0..gs.h {
                                let iy = (oy * stride + kh) as isize - pad as isize;
                                if iy < 0 || iy >= xs.h as isize {
                                    continue;
                                }
                                let xrow = x_base + iy as usize * xs.w;
                                let grow = gy_base + oy * gs.w;
                                for ox in 0..gs.w {
                                    let ix = (ox * stride + kw) as isize - pad as isize;
                                    if ix < 0 || ix >= xs.w as isize {
                                        continue;
                                    }
                                    acc += xd[xrow + ix as usize] * gyd[grow + ox];
                                }
                            }
                        }
                        gwp[(ci * weight_shape.h + kh) * weight_shape.w + kw] = acc;
                    }
                }
            }
        });
    Tensor::from_vec(weight_shape, gw)
}

/// Gradient of a convolution bias: sum of `gy` over batch and space.
pub fn conv_grad_bias<T: Scalar>(gy: &Tensor<T>) -> Result<Tensor<T>> {
    let gs = gy.shape();
    let gyd = gy.data();
    let mut gb = vec![T::zero(); gs.c];
    for n in 0..gs.n {
        for c in 0..gs.c {
            let base = (n * gs.c + c) * gs.h * gs.w;
            let mut acc = T::zero();
            for i in 0..gs.h * gs.w {
                acc += gyd[base + i];
            }
            gb[c] += acc;
        }
    }
    Tensor::from_vec(Shape::new(1, gs.c, 1, 1), gb)
}

/// Transpose convolution, the adjoint of an unpadded strided `conv2d`.
///
/// `x` is `N x C_a x H x W`, `weight` is `C_a x C_b x k x k`; the output has
/// `C_b` channels and extent `(H-1)*stride + k` per axis. With the same
/// weight, `<conv2d(a, w), b> == <a, conv_transpose2d(b, w)>`.
pub fn conv_transpose2d<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
) -> Result<Tensor<T>> {
    if stride < 1 {
        return Err(Error::Argument(format!("stride must be >= 1, got {stride}")));
    }
    let xs = x.shape();
    let ws = weight.shape();
    if xs.c != ws.n {
        return Err(Error::Dimension(format!(
            "conv_transpose2d: input has {} channels but weight expects {}",
            xs.c, ws.n
        )));
    }
    if let Some(b) = bias {
        check_bias(b, ws.c)?;
    }
    let oh = (xs.h - 1) * stride + ws.h;
    let ow = (xs.w - 1) * stride + ws.w;
    let out_shape = Shape::new(xs.n, ws.c, oh, ow);

    let xd = x.data();
    let wd = weight.data();
    let mut out = vec![T::zero(); out_shape.count()];
    out.par_chunks_mut(oh * ow).enumerate().for_each(|(plane, yp)| {
        let n = plane / ws.c;
        let cb = plane % ws.c;
        let b = bias.map(|b| b.data()[cb]).unwrap_or_else(T::zero);
        for v in yp.iter_mut() {
            *v = b;
        }
        for ca in 0..xs.c {
            let x_base = (n * xs.c + ca) * xs.h * xs.w;
            let w_base = (ca * ws.c + cb) * ws.h * ws.w;
            for iy in 0..xs.h {
                for ix in 0..xs.w {
                    let xv = xd[x_base + iy * xs.w + ix];
                    for kh in 0..ws.h {
                        let orow = (iy * stride + kh) * ow + ix * stride;
                        for kw in 0..ws.w {
                            yp[orow + kw] += xv * wd[w_base + kh * ws.w + kw];
                        }
                    }
                }
            }
        }
    });
    let t = Tensor::from_vec(out_shape, out)?;
    t.ensure_finite("conv_transpose2d")?;
    Ok(t)
}

/// Gradient of `conv_transpose2d` with respect to its input.
pub fn conv_transpose2d_grad_input<T: Scalar>(
    gy: &Tensor<T>,
    weight: &Tensor<T>,
    input_shape: Shape,
    stride: usize,
) -> Result<Tensor<T>> {
    let gs = gy.shape();
    let ws = weight.shape();
    let gyd = gy.data();
    let wd = weight.data();
    let mut gx = vec![T::zero(); input_shape.count()];
    gx.par_chunks_mut(input_shape.h * input_shape.w)
        .enumerate()
        .for_each(|(plane, gxp)| {
            let n = plane / input_shape.c;
            let ca = plane % input_shape.c;
            for cb in 0..ws.c {
                let gy_base = (n * gs.c + cb) * gs.h * gs.w;
                let w_base = (ca * ws.c + cb) * ws.h * ws.w;
                for iy in 0..input_shape.h {
                    for ix in 0..input_shape.w {
                        let mut acc = T::zero();
                        for kh in 0..ws.h {
                            let grow = gy_base + (iy * stride + kh) * gs.w + ix * stride;
                            for kw in 0..ws.w {
                                acc += gyd[grow + kw] * wd[w_base + kh * ws.w + kw];
                            }
                        }
                        gxp[iy * input_shape.w + ix] += acc;
                    }
                }
            }
        });
    Tensor::from_vec(input_shape, gx)
}

/// Gradient of `conv_transpose2d` with respect to its weight.
pub fn conv_transpose2d_grad_weight<T: Scalar>(
    x: &Tensor<T>,
    gy: &Tensor<T>,
    weight_shape: Shape,
    stride: usize,
) -> Result<Tensor<T>> {
    let xs = x.shape();
    let gs = gy.shape();
    let xd = x.data();
    let gyd = gy.data();
    let mut gw = vec![T::zero(); weight_shape.count()];
    gw.par_chunks_mut(weight_shape.c * weight_shape.h * weight_shape.w)
        .enumerate()
        .for_each(|(ca, gwp)| {
            for cb in 0..weight_shape.c {
                for kh in 0..weight_shape.h {
                    for kw in 0..weight_shape.w {
                        let mut acc = T::zero();
                        for n in 0..xs.n {
                            let x_base = (n * xs.c + ca) * xs.h * xs.w;
                            let gy_base = (n * gs.c + cb) * gs.h * gs.w;
                            for iy in 0..xs.h {
                                let xrow = x_base + iy * xs.w;
                                let grow = gy_base + (iy * stride + kh) * gs.w;
                                for ix in 0..xs.w {
                                    acc += xd[xrow + ix] * gyd[grow + ix * stride + kw];
                                }
                            }
                        }
                        gwp[(cb * weight_shape.h + kh) * weight_shape.w + kw] = acc;
                    }
                }
            }
        });
    Tensor::from_vec(weight_shape, gw)
}

/// Elementwise `max(0, x)`.
pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .map(|&v| if v > T::zero() { v } else { T::zero() })
        .collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

/// ReLU adjoint; the subgradient at exactly zero is zero.
pub fn relu_grad<T: Scalar>(x: &Tensor<T>, gy: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != gy.shape() {
        return Err(Error::Dimension(format!(
            "relu_grad: shapes {} vs {}",
            x.shape(),
            gy.shape()
        )));
    }
    let data = x
        .data()
        .iter()
        .zip(gy.data().iter())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(x.shape(), data)
}

/// Softmax over the channel axis, independently at each `(n, h, w)` site.
/// Uses max-subtraction for stability.
pub fn softmax_channels<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    x.ensure_finite("softmax_channels input")?;
    let s = x.shape();
    let xd = x.data();
    let plane = s.h * s.w;
    let mut out = vec![T::zero(); xd.len()];
    for n in 0..s.n {
        let base = n * s.c * plane;
        for p in 0..plane {
            let mut m = xd[base + p];
            for c in 1..s.c {
                let v = xd[base + c * plane + p];
                if v > m {
                    m = v;
                }
            }
            let mut sum = T::zero();
            for c in 0..s.c {
                let e = (xd[base + c * plane + p] - m).exp();
                out[base + c * plane + p] = e;
                sum += e;
            }
            for c in 0..s.c {
                out[base + c * plane + p] /= sum;
            }
        }
    }
    let t = Tensor::from_vec(s, out)?;
    t.ensure_finite("softmax_channels")?;
    Ok(t)
}

/// Softmax adjoint in terms of the forward output `y`.
pub fn softmax_channels_grad<T: Scalar>(y: &Tensor<T>, gy: &Tensor<T>) -> Result<Tensor<T>> {
    if y.shape() != gy.shape() {
        return Err(Error::Dimension(format!(
            "softmax_channels_grad: shapes {} vs {}",
            y.shape(),
            gy.shape()
        )));
    }
    let s = y.shape();
    let yd = y.data();
    let gd = gy.data();
    let plane = s.h * s.w;
    let mut out = vec![T::zero(); yd.len()];
    for n in 0..s.n {
        let base = n * s.c * plane;
        for p in 0..plane {
            let mut dot = T::zero();
            for c in 0..s.c {
                let i = base + c * plane + p;
                dot += gd[i] * yd[i];
            }
            for c in 0..s.c {
                let i = base + c * plane + p;
                out[i] = yd[i] * (gd[i] - dot);
            }
        }
    }
    Tensor::from_vec(s, out)
}

/// Replicate each pixel into an `s x s` block.
pub fn nearest_upsample<T: Scalar>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    if s < 1 {
        return Err(Error::Argument(format!("scale must be >= 1, got {s}")));
    }
    let xs = x.shape();
    let out_shape = Shape::new(xs.n, xs.c, xs.h * s, xs.w * s);
    let xd = x.data();
    let mut out = vec![T::zero(); out_shape.count()];
    for plane in 0..xs.n * xs.c {
        let xb = plane * xs.h * xs.w;
        let yb = plane * out_shape.h * out_shape.w;
        for oy in 0..out_shape.h {
            let xrow = xb + (oy / s) * xs.w;
            let yrow = yb + oy * out_shape.w;
            for ox in 0..out_shape.w {
                out[yrow + ox] = xd[xrow + ox / s];
            }
        }
    }
    Tensor::from_vec(out_shape, out)
}

/// Adjoint of nearest upsampling: sum each `s x s` block of `gy`.
pub fn nearest_upsample_grad<T: Scalar>(gy: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let gs = gy.shape();
    if gs.h % s != 0 || gs.w % s != 0 {
        return Err(Error::Dimension(format!(
            "nearest_upsample_grad: extent {}x{} not divisible by {s}",
            gs.h, gs.w
        )));
    }
    let in_shape = Shape::new(gs.n, gs.c, gs.h / s, gs.w / s);
    let gd = gy.data();
    let mut gx = vec![T::zero(); in_shape.count()];
    for plane in 0..gs.n * gs.c {
        let gb = plane * gs.h * gs.w;
        let xb = plane * in_shape.h * in_shape.w;
        for oy in 0..gs.h {
            let grow = gb + oy * gs.w;
            let xrow = xb + (oy / s) * in_shape.w;
            for ox in 0..gs.w {
                gx[xrow + ox / s] += gd[grow + ox];
            }
        }
    }
    Tensor::from_vec(in_shape, gx)
}

/// Split along the channel axis into `s` equal parts.
/// Part `i` holds channels `[i*C/s, (i+1)*C/s)`.
pub fn split_channels<T: Scalar>(x: &Tensor<T>, s: usize) -> Result<Vec<Tensor<T>>> {
    let xs = x.shape();
    if s == 0 || xs.c % s != 0 {
        return Err(Error::Argument(format!(
            "split_channels: {} channels not divisible into {s} parts",
            xs.c
        )));
    }
    let part = xs.c / s;
    let plane = xs.h * xs.w;
    let xd = x.data();
    let mut out = Vec::with_capacity(s);
    for i in 0..s {
        let shape = Shape::new(xs.n, part, xs.h, xs.w);
        let mut data = Vec::with_capacity(shape.count());
        for n in 0..xs.n {
            let base = (n * xs.c + i * part) * plane;
            data.extend_from_slice(&xd[base..base + part * plane]);
        }
        out.push(Tensor::from_vec(shape, data)?);
    }
    Ok(out)
}

/// Concatenate along the channel axis. Inverse of [`split_channels`].
pub fn concat_channels<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    if parts.is_empty() {
        return Err(Error::Argument("concat_channels: empty input list".into()));
    }
    let first = parts[0].shape();
    let mut c_total = 0;
    for p in parts {
        let s = p.shape();
        if s.n != first.n || s.h != first.h || s.w != first.w {
            return Err(Error::Dimension(format!(
                "concat_channels: incompatible shapes {first} vs {s}"
            )));
        }
        c_total += s.c;
    }
    let out_shape = Shape::new(first.n, c_total, first.h, first.w);
    let plane = first.h * first.w;
    let mut data = Vec::with_capacity(out_shape.count());
    for n in 0..first.n {
        for p in parts {
            let pc = p.shape().c;
            let base = n * pc * plane;
            data.extend_from_slice(&p.data()[base..base + pc * plane]);
        }
    }
    Tensor::from_vec(out_shape, data)
}

/// Channel range `[c0, c0+len)` of `gy`; used as the split/concat adjoint.
pub fn slice_channels<T: Scalar>(x: &Tensor<T>, c0: usize, len: usize) -> Result<Tensor<T>> {
    let xs = x.shape();
    if c0 + len > xs.c {
        return Err(Error::Dimension(format!(
            "slice_channels: range {c0}..{} exceeds {} channels",
            c0 + len,
            xs.c
        )));
    }
    let plane = xs.h * xs.w;
    let shape = Shape::new(xs.n, len, xs.h, xs.w);
    let mut data = Vec::with_capacity(shape.count());
    for n in 0..xs.n {
        let base = (n * xs.c + c0) * plane;
        data.extend_from_slice(&x.data()[base..base + len * plane]);
    }
    Tensor::from_vec(shape, data)
}

fn zip_same_shape<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    op: &str,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "{op}: shapes {} vs {}",
            a.shape(),
            b.shape()
        )));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::from_vec(a.shape(), data)
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let t = zip_same_shape(a, b, "add", |x, y| x + y)?;
    t.ensure_finite("add")?;
    Ok(t)
}

pub fn sub<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let t = zip_same_shape(a, b, "sub", |x, y| x - y)?;
    t.ensure_finite("sub")?;
    Ok(t)
}

/// Hadamard product.
pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let t = zip_same_shape(a, b, "mul", |x, y| x * y)?;
    t.ensure_finite("mul")?;
    Ok(t)
}

pub fn abs<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let data = x.data().iter().map(|v| v.abs()).collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

/// Elementwise sign with `sign(0) = 0`; the subgradient of `abs`.
pub fn signum_zero<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .map(|&v| {
            if v > T::zero() {
                T::one()
            } else if v < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        })
        .collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

pub fn scale<T: Scalar>(x: &Tensor<T>, c: f64) -> Result<Tensor<T>> {
    let k = T::from_f64(c);
    let data = x.data().iter().map(|&v| v * k).collect();
    let t = Tensor::from_vec(x.shape(), data)?;
    t.ensure_finite("scale")?;
    Ok(t)
}

/// Sum of all elements as a 1x1x1x1 tensor.
pub fn sum_all<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut acc = T::zero();
    for &v in x.data() {
        acc += v;
    }
    Tensor::scalar(acc)
}

/// Flat inner product of two same-shape tensors, accumulated in f64.
pub fn inner_product<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "inner_product: shapes {} vs {}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(a.data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| x.as_f64() * y.as_f64())
        .sum())
}
