//! Forward and backward kernels for the tape's op vocabulary.
//!
//! Layouts: sequences are `[batch, len, channels]`, conv kernels
//! `[width, in_ch, out_ch]`, dense weights `[in, out]`.

use super::Tensor;
use crate::{Error, Result};

fn shape_err(msg: String) -> Error {
    Error::Shape(msg)
}

pub fn conv1d_out_len(len: usize, width: usize, stride: usize) -> Option<usize> {
    if stride == 0 || width == 0 || len < width {
        None
    } else {
        Some((len - width) / stride + 1)
    }
}

/// Valid (unpadded) strided 1-D convolution.
pub fn conv1d_forward(input: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize) -> Result<Tensor> {
    let (b, len, cin) = dims3(input, "conv1d input")?;
    let (kw, kin, cout) = dims3(kernel, "conv1d kernel")?;
    if kin != cin {
        return Err(shape_err(format!("conv1d: input has {cin} channels, kernel expects {kin}")));
    }
    if bias.shape() != [cout] {
        return Err(shape_err(format!("conv1d: bias shape {:?}, expected [{cout}]", bias.shape())));
    }
    let lout = conv1d_out_len(len, kw, stride).ok_or_else(|| {
        shape_err(format!("conv1d: len {len}, width {kw}, stride {stride} gives no output"))
    })?;
    let (x, k, bi) = (input.data(), kernel.data(), bias.data());
    let mut out = vec![0.0; b * lout * cout];
    for bb in 0..b {
        for t in 0..lout {
            let o_row = &mut out[(bb * lout + t) * cout..(bb * lout + t + 1) * cout];
            o_row.copy_from_slice(bi);
            for j in 0..kw {
                let x_row = &x[(bb * len + t * stride + j) * cin..][..cin];
                for (c, &xv) in x_row.iter().enumerate() {
                    let k_row = &k[(j * cin + c) * cout..][..cout];
                    for (o, &kv) in o_row.iter_mut().zip(k_row) {
                        *o += xv * kv;
                    }
                }
            }
        }
    }
    Tensor::new(vec![b, lout, cout], out)
}

/// Gradients of conv1d w.r.t. (input, kernel, bias).
pub fn conv1d_backward(
    input: &Tensor,
    kernel: &Tensor,
    stride: usize,
    grad_out: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (b, len, cin) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (kw, cout) = (kernel.shape()[0], kernel.shape()[2]);
    let lout = grad_out.shape()[1];
    let (x, k, g) = (input.data(), kernel.data(), grad_out.data());
    let mut gx = vec![0.0; x.len()];
    let mut gk = vec![0.0; k.len()];
    let mut gb = vec![0.0; cout];
    for bb in 0..b {
        for t in 0..lout {
            let g_row = &g[(bb * lout + t) * cout..][..cout];
            for (acc, gv) in gb.iter_mut().zip(g_row) {
                *acc += gv;
            }
            for j in 0..kw {
                let base = (bb * len + t * stride + j) * cin;
                for c in 0..cin {
                    let k_row = &k[(j * cin + c) * cout..][..cout];
                    let gk_row = &mut gk[(j * cin + c) * cout..][..cout];
                    let xv = x[base + c];
                    let mut acc = 0.0;
                    for o in 0..cout {
                        acc += g_row[o] * k_row[o];
                        gk_row[o] += xv * g_row[o];
                    }
                    gx[base + c] += acc;
                }
            }
        }
    }
    (
        Tensor::new(input.shape().to_vec(), gx).unwrap(),
        Tensor::new(kernel.shape().to_vec(), gk).unwrap(),
        Tensor::vector(gb),
    )
}

/// Affine map over the last axis: `[.., in] x [in, out] + [out]`.
pub fn linear_forward(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (fin, fout) = dims2(weight, "linear weight")?;
    let last = *input.shape().last().ok_or_else(|| shape_err("linear: scalar input".into()))?;
    if last != fin {
        return Err(shape_err(format!("linear: input width {last}, weight expects {fin}")));
    }
    if let Some(b) = bias {
        if b.shape() != [fout] {
            return Err(shape_err(format!("linear: bias shape {:?}, expected [{fout}]", b.shape())));
        }
    }
    let rows = input.numel() / fin;
    let (x, w) = (input.data(), weight.data());
    let mut out = vec![0.0; rows * fout];
    for r in 0..rows {
        let o_row = &mut out[r * fout..(r + 1) * fout];
        if let Some(b) = bias {
            o_row.copy_from_slice(b.data());
        }
        for (i, &xv) in x[r * fin..(r + 1) * fin].iter().enumerate() {
            for (o, &wv) in o_row.iter_mut().zip(&w[i * fout..(i + 1) * fout]) {
                *o += xv * wv;
            }
        }
    }
    let mut shape = input.shape().to_vec();
    *shape.last_mut().unwrap() = fout;
    Tensor::new(shape, out)
}

/// Gradients of linear w.r.t. (input, weight, bias).
pub fn linear_backward(input: &Tensor, weight: &Tensor, grad_out: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (fin, fout) = (weight.shape()[0], weight.shape()[1]);
    let rows = input.numel() / fin;
    let (x, w, g) = (input.data(), weight.data(), grad_out.data());
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; fout];
    for r in 0..rows {
        let g_row = &g[r * fout..(r + 1) * fout];
        for (acc, gv) in gb.iter_mut().zip(g_row) {
            *acc += gv;
        }
        for i in 0..fin {
            let xv = x[r * fin + i];
            let w_row = &w[i * fout..(i + 1) * fout];
            let gw_row = &mut gw[i * fout..(i + 1) * fout];
            let mut acc = 0.0;
            for o in 0..fout {
                acc += g_row[o] * w_row[o];
                gw_row[o] += xv * g_row[o];
            }
            gx[r * fin + i] = acc;
        }
    }
    (
        Tensor::new(input.shape().to_vec(), gx).unwrap(),
        Tensor::new(weight.shape().to_vec(), gw).unwrap(),
        Tensor::vector(gb),
    )
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Row-wise softmax over the last axis, max-subtracted.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    if logits.data().iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("softmax input"));
    }
    let w = *logits.shape().last().ok_or_else(|| shape_err("softmax: scalar input".into()))?;
    let mut out = vec![0.0; logits.numel()];
    for (row, o) in logits.data().chunks(w).zip(out.chunks_mut(w)) {
        softmax_row(row, o);
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// Backward of softmax given its output `y`.
pub fn softmax_backward(y: &Tensor, grad_out: &Tensor) -> Tensor {
    let w = *y.shape().last().unwrap();
    let mut gx = vec![0.0; y.numel()];
    for ((yr, gr), xr) in y.data().chunks(w).zip(grad_out.data().chunks(w)).zip(gx.chunks_mut(w)) {
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((x, &yv), &gv) in xr.iter_mut().zip(yr).zip(gr) {
            *x = yv * (gv - dot);
        }
    }
    Tensor::new(y.shape().to_vec(), gx).unwrap()
}

/// Softmax-weighted average of hidden states over steps.
///
/// `h` is `[batch, steps, dim]`, `scores` is `[batch, steps]`. Returns the
/// context `[batch, dim]` and the attention weights `[batch, steps]`.
pub fn attention_pool_forward(h: &Tensor, scores: &Tensor) -> Result<(Tensor, Tensor)> {
    let (b, s, d) = dims3(h, "attention hidden states")?;
    if scores.shape() != [b, s] {
        return Err(shape_err(format!(
            "attention: scores shape {:?}, expected [{b}, {s}]",
            scores.shape()
        )));
    }
    if s == 0 {
        return Err(shape_err("attention: zero steps".into()));
    }
    let weights = softmax(scores)?;
    let mut ctx = vec![0.0; b * d];
    for bb in 0..b {
        let c_row = &mut ctx[bb * d..(bb + 1) * d];
        for t in 0..s {
            let wv = weights.data()[bb * s + t];
            for (c, &hv) in c_row.iter_mut().zip(&h.data()[(bb * s + t) * d..][..d]) {
                *c += wv * hv;
            }
        }
    }
    Ok((Tensor::new(vec![b, d], ctx)?, weights))
}

/// Gradients of attention pooling w.r.t. (h, scores).
pub fn attention_pool_backward(h: &Tensor, weights: &Tensor, grad_ctx: &Tensor) -> (Tensor, Tensor) {
    let (b, s, d) = (h.shape()[0], h.shape()[1], h.shape()[2]);
    let (hd, w, g) = (h.data(), weights.data(), grad_ctx.data());
    let mut gh = vec![0.0; hd.len()];
    let mut gs = vec![0.0; b * s];
    for bb in 0..b {
        let g_row = &g[bb * d..(bb + 1) * d];
        let mut gw = vec![0.0; s];
        for t in 0..s {
            let wv = w[bb * s + t];
            let h_row = &hd[(bb * s + t) * d..][..d];
            let gh_row = &mut gh[(bb * s + t) * d..][..d];
            let mut acc = 0.0;
            for k in 0..d {
                gh_row[k] = wv * g_row[k];
                acc += g_row[k] * h_row[k];
            }
            gw[t] = acc;
        }
        let dot: f64 = (0..s).map(|t| w[bb * s + t] * gw[t]).sum();
        for t in 0..s {
            gs[bb * s + t] = w[bb * s + t] * (gw[t] - dot);
        }
    }
    (
        Tensor::new(h.shape().to_vec(), gh).unwrap(),
        Tensor::new(vec![b, s], gs).unwrap(),
    )
}

pub(crate) fn dims2(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [a, b] => Ok((*a, *b)),
        other => Err(shape_err(format!("{what}: expected rank 2, got {other:?}"))),
    }
}

pub(crate) fn dims3(t: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [a, b, c] => Ok((*a, *b, *c)),
        other => Err(shape_err(format!("{what}: expected rank 3, got {other:?}"))),
    }
}
