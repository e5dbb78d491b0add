//! Forward and backward passes for the fixed layer set.
//!
//! Activations are laid out `[N, C, H, W]` for spatial layers and `[N, D]`
//! after flattening. Reductions accumulate in f64 in a fixed order (input
//! channel, then kernel row, then kernel column for convolutions; input
//! feature for dense layers) and round to f32 once, so serial results are
//! bit-reproducible.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, shape_err, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Gradients produced by one layer's backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    /// `(weights, biases)` gradients for parameterized layers.
    pub params: Option<(Tensor, Tensor)>,
    pub input: Tensor,
}

/// Output extent of a convolution along one axis, when it is a positive integer.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || kernel > padded || (padded - kernel) % stride != 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Output extent of a pooling window along one axis (floor division).
pub fn pool_out_extent(input: usize, window: usize, stride: usize) -> Option<usize> {
    if stride == 0 || window == 0 || window > input {
        return None;
    }
    Some((input - window) / stride + 1)
}

struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    k: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

fn conv_geom(input: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<ConvGeom> {
    let [n, c, h, w] = input.dims4()?;
    let [f, kc, kh, kw] = kernel.dims4()?;
    if kc != c {
        return Err(shape_err!("kernel expects {} input channels, input has {}", kc, c));
    }
    if kh != kw {
        return Err(shape_err!("only square kernels are supported, got {}x{}", kh, kw));
    }
    let oh = conv_out_extent(h, kh, stride, padding)
        .ok_or_else(|| shape_err!("height {} with kernel {}, stride {}, padding {} is not integral", h, kh, stride, padding))?;
    let ow = conv_out_extent(w, kw, stride, padding)
        .ok_or_else(|| shape_err!("width {} with kernel {}, stride {}, padding {} is not integral", w, kw, stride, padding))?;
    Ok(ConvGeom { n, c, h, w, f, k: kh, oh, ow, stride, pad: padding })
}

/// Cross-correlation of `input [N,C,H,W]` with `kernel [F,C,k,k]` plus a
/// per-filter bias.
pub fn conv2d_forward(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let g = conv_geom(input, kernel, stride, padding)?;
    if bias.len() != g.f {
        return Err(shape_err!("bias has {} entries for {} filters", bias.len(), g.f));
    }
    let x = input.data();
    let wt = kernel.data();
    let b = bias.data();
    let mut out = vec![0f32; g.n * g.f * g.oh * g.ow];
    let mut o = 0;
    for n in 0..g.n {
        for f in 0..g.f {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let mut acc = 0f64;
                    for c in 0..g.c {
                        let xbase = (n * g.c + c) * g.h;
                        let wbase = (f * g.c + c) * g.k;
                        for ky in 0..g.k {
                            let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                            if iy < 0 || iy >= g.h as isize {
                                continue;
                            }
                            let xrow = (xbase + iy as usize) * g.w;
                            let wrow = (wbase + ky) * g.k;
                            for kx in 0..g.k {
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if ix < 0 || ix >= g.w as isize {
                                    continue;
                                }
                                acc += x[xrow + ix as usize] as f64 * wt[wrow + kx] as f64;
                            }
                        }
                    }
                    out[o] = (acc + b[f] as f64) as f32;
                    o += 1;
                }
            }
        }
    }
    Tensor::new(vec![g.n, g.f, g.oh, g.ow], out)
}

/// Gradients of [`conv2d_forward`] with respect to input, kernel and bias.
pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    stride: usize,
    padding: usize,
    upstream: &Tensor,
) -> Result<LayerGradients> {
    let g = conv_geom(input, kernel, stride, padding)?;
    if upstream.shape() != [g.n, g.f, g.oh, g.ow] {
        return Err(shape_err!(
            "upstream gradient {:?} does not match conv output {:?}",
            upstream.shape(),
            [g.n, g.f, g.oh, g.ow]
        ));
    }
    let x = input.data();
    let wt = kernel.data();
    let up = upstream.data();
    let mut dx = vec![0f64; x.len()];
    let mut dw = vec![0f64; wt.len()];
    let mut db = vec![0f64; g.f];
    let mut o = 0;
    for n in 0..g.n {
        for f in 0..g.f {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let u = up[o] as f64;
                    o += 1;
                    db[f] += u;
                    if u == 0.0 {
                        continue;
                    }
                    for c in 0..g.c {
                        let xbase = (n * g.c + c) * g.h;
                        let wbase = (f * g.c + c) * g.k;
                        for ky in 0..g.k {
                            let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                            if iy < 0 || iy >= g.h as isize {
                                continue;
                            }
                            let xrow = (xbase + iy as usize) * g.w;
                            let wrow = (wbase + ky) * g.k;
                            for kx in 0..g.k {
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if ix < 0 || ix >= g.w as isize {
                                    continue;
                                }
                                let xi = xrow + ix as usize;
                                dw[wrow + kx] += u * x[xi] as f64;
                                dx[xi] += u * wt[wrow + kx] as f64;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(LayerGradients {
        params: Some((
            Tensor::new(kernel.shape().to_vec(), to_f32(dw))?,
            Tensor::new(vec![g.f], to_f32(db))?,
        )),
        input: Tensor::new(input.shape().to_vec(), to_f32(dx))?,
    })
}

/// Max pooling over square windows. Returns the pooled tensor and, per output
/// element, the flat input index that won (ties go to the lowest index).
pub fn maxpool_forward(input: &Tensor, window: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    let [n, c, h, w] = input.dims4()?;
    let oh = pool_out_extent(h, window, stride)
        .ok_or_else(|| shape_err!("pool window {} (stride {}) does not fit height {}", window, stride, h))?;
    let ow = pool_out_extent(w, window, stride)
        .ok_or_else(|| shape_err!("pool window {} (stride {}) does not fit width {}", window, stride, w))?;
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * stride * w + ox * stride;
                for ky in 0..window {
                    let row = base + (oy * stride + ky) * w + ox * stride;
                    for kx in 0..window {
                        if x[row + kx] > x[best] {
                            best = row + kx;
                        }
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, oh, ow], out)?, argmax))
}

pub fn maxpool_backward(input_shape: &[usize], argmax: &[usize], upstream: &Tensor) -> Result<Tensor> {
    if argmax.len() != upstream.len() {
        return Err(shape_err!(
            "pool record has {} entries, upstream gradient {}",
            argmax.len(),
            upstream.len()
        ));
    }
    let mut dx = vec![0f64; input_shape.iter().product()];
    for (&i, &u) in argmax.iter().zip(upstream.data()) {
        let slot = dx
            .get_mut(i)
            .ok_or_else(|| shape_err!("pool record index {} outside input", i))?;
        *slot += u as f64;
    }
    Tensor::new(input_shape.to_vec(), to_f32(dx))
}

/// `input [N,D] · weightᵀ [D,U] + bias [U]`.
pub fn dense_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let [n, d] = input.dims2()?;
    let [u, wd] = weight.dims2()?;
    if wd != d {
        return Err(shape_err!("dense weight expects {} inputs, got {}", wd, d));
    }
    if bias.len() != u {
        return Err(shape_err!("bias has {} entries for {} units", bias.len(), u));
    }
    let x = input.data();
    let wt = weight.data();
    let b = bias.data();
    let mut out = Vec::with_capacity(n * u);
    for row in x.chunks_exact(d) {
        for (unit, wrow) in wt.chunks_exact(d).enumerate() {
            let acc: f64 = row.iter().zip(wrow).map(|(&a, &w)| a as f64 * w as f64).sum();
            out.push((acc + b[unit] as f64) as f32);
        }
    }
    Tensor::new(vec![n, u], out)
}

pub fn dense_backward(input: &Tensor, weight: &Tensor, upstream: &Tensor) -> Result<LayerGradients> {
    let [n, d] = input.dims2()?;
    let [u, wd] = weight.dims2()?;
    if wd != d || upstream.shape() != [n, u] {
        return Err(shape_err!(
            "dense backward: input {:?}, weight {:?}, upstream {:?}",
            input.shape(),
            weight.shape(),
            upstream.shape()
        ));
    }
    let x = input.data();
    let wt = weight.data();
    let up = upstream.data();
    let mut dx = vec![0f64; n * d];
    let mut dw = vec![0f64; u * d];
    let mut db = vec![0f64; u];
    for s in 0..n {
        let xrow = &x[s * d..(s + 1) * d];
        let dxrow = &mut dx[s * d..(s + 1) * d];
        for unit in 0..u {
            let g = up[s * u + unit] as f64;
            db[unit] += g;
            if g == 0.0 {
                continue;
            }
            let wrow = &wt[unit * d..(unit + 1) * d];
            let dwrow = &mut dw[unit * d..(unit + 1) * d];
            for j in 0..d {
                dwrow[j] += g * xrow[j] as f64;
                dxrow[j] += g * wrow[j] as f64;
            }
        }
    }
    Ok(LayerGradients {
        params: Some((Tensor::new(vec![u, d], to_f32(dw))?, Tensor::new(vec![u], to_f32(db))?)),
        input: Tensor::new(vec![n, d], to_f32(dx))?,
    })
}

pub fn relu(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    Tensor::new(input.shape().to_vec(), data).expect("same shape")
}

/// Passes the upstream gradient where the forward input was strictly positive.
pub fn relu_backward(input: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    if input.shape() != upstream.shape() {
        return Err(shape_err!("relu backward: {:?} vs {:?}", input.shape(), upstream.shape()));
    }
    let data = input
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

/// Inverted dropout: each element is zeroed with probability `rate` and
/// survivors are scaled by `1 / (1 - rate)`. Returns the output and the
/// per-element multiplier used, which is the backward mask.
pub fn dropout_train(input: &Tensor, rate: f32, rng: &mut Rng) -> Result<(Tensor, Vec<f32>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(invalid!("dropout rate must lie in [0, 1), got {}", rate));
    }
    if rate == 0.0 {
        return Ok((input.clone(), vec![1.0; input.len()]));
    }
    let keep_scale = 1.0 / (1.0 - rate);
    let mask: Vec<f32> = (0..input.len())
        .map(|_| if rng.next_f64() < rate as f64 { 0.0 } else { keep_scale })
        .collect();
    let data = input.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
    Ok((Tensor::new(input.shape().to_vec(), data)?, mask))
}

pub fn dropout_backward(mask: &[f32], upstream: &Tensor) -> Result<Tensor> {
    if mask.len() != upstream.len() {
        return Err(shape_err!("dropout mask has {} entries, upstream {}", mask.len(), upstream.len()));
    }
    let data = upstream.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
    Tensor::new(upstream.shape().to_vec(), data)
}

/// Row-wise softmax of `[N, C]` logits.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let [_, c] = logits.dims2()?;
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks_exact(c) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let exps: Vec<f64> = row.iter().map(|&v| libm::exp(v as f64 - max)).collect();
        let total: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| (e / total) as f32));
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// Mean cross-entropy of softmax(logits) against integer labels, and its
/// gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let [n, c] = logits.dims2()?;
    if labels.len() != n {
        return Err(shape_err!("{} labels for {} rows", labels.len(), n));
    }
    let mut loss = 0f64;
    let mut grad = Vec::with_capacity(n * c);
    for (row, &label) in logits.data().chunks_exact(c).zip(labels) {
        if label >= c {
            return Err(invalid!("label {} out of range for {} classes", label, c));
        }
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let exps: Vec<f64> = row.iter().map(|&v| libm::exp(v as f64 - max)).collect();
        let total: f64 = exps.iter().sum();
        loss -= row[label] as f64 - max - libm::log(total);
        for (j, e) in exps.iter().enumerate() {
            let p = e / total;
            let target = if j == label { 1.0 } else { 0.0 };
            grad.push(((p - target) / n as f64) as f32);
        }
    }
    Ok((loss / n as f64, Tensor::new(vec![n, c], grad)?))
}

/// One momentum-SGD step: `v ← momentum·v − lr·g`, `p ← p + v`.
///
/// Entries whose velocity is exactly zero are left untouched, so a zero
/// learning rate is a bit-exact no-op.
pub fn sgd_update(
    params: &mut [f32],
    grads: &[f32],
    velocity: &mut [f32],
    learning_rate: f32,
    momentum: f32,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(shape_err!(
            "sgd: {} params, {} grads, {} velocity entries",
            params.len(),
            grads.len(),
            velocity.len()
        ));
    }
    if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
        return Err(invalid!("learning rate must be finite and non-negative, got {}", learning_rate));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(invalid!("momentum must lie in [0, 1), got {}", momentum));
    }
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v - learning_rate * g;
        if *v != 0.0 {
            *p += *v;
        }
    }
    Ok(())
}

fn to_f32(values: Vec<f64>) -> Vec<f32> {
    values.into_iter().map(|v| v as f32).collect()
}
