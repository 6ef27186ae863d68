//! Forward and backward passes of the individual layers.
//!
//! Activations are channel-first: `B x C x L` for the convolutional trunk and
//! `B x D` for the dense head.

use crate::error::{Error, Result};
use crate::nn::tensor::{axpy, dot, Tensor};
use crate::scalar::Scalar;

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Valid output positions `[lo, hi)` for kernel tap `k` under same padding.
#[inline]
fn tap_range(len: usize, k: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k);
    let hi = (len + pad).saturating_sub(k).min(len);
    (lo, hi.max(lo))
}

fn conv_dims<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>) -> Result<(usize, usize, usize, usize, usize)> {
    let (b, cin, len) = x.dims3("conv1d input")?;
    let (cout, wcin, k) = w.dims3("conv1d weight")?;
    if wcin != cin {
        return Err(Error::ShapeMismatch(format!(
            "conv1d: input has {cin} channels, weight expects {wcin}"
        )));
    }
    if k % 2 == 0 {
        return Err(Error::ShapeMismatch(format!("conv1d: kernel size {k} must be odd")));
    }
    Ok((b, cin, len, cout, k))
}

/// Stride-1 convolution with zero padding `K/2`:
/// `out[b][o][t] = bias[o] + sum_{c,k} w[o][c][k] * x_pad[b][c][t + k]`.
pub fn conv1d_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias: &[T]) -> Result<Tensor<T>> {
    let (b, cin, len, cout, k) = conv_dims(x, w)?;
    if bias.len() != cout {
        return Err(Error::ShapeMismatch(format!(
            "conv1d: bias has {} entries, expected {cout}",
            bias.len()
        )));
    }
    let pad = k / 2;
    let mut out = Tensor::zeros(&[b, cout, len]);
    let (xd, wd) = (x.data(), w.data());
    let od = out.data_mut();
    for bi in 0..b {
        for o in 0..cout {
            let row = &mut od[(bi * cout + o) * len..][..len];
            row.fill(bias[o]);
            for c in 0..cin {
                let xr = &xd[(bi * cin + c) * len..][..len];
                for kk in 0..k {
                    let (lo, hi) = tap_range(len, kk, pad);
                    let wk = wd[(o * cin + c) * k + kk];
                    axpy(&mut row[lo..hi], wk, &xr[lo + kk - pad..hi + kk - pad]);
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv1d_forward`] with respect to input, weight and bias.
pub fn conv1d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Vec<T>)> {
    let (b, cin, len, cout, k) = conv_dims(x, w)?;
    if grad_out.shape() != [b, cout, len] {
        return Err(Error::ShapeMismatch(format!(
            "conv1d backward: grad_out {:?}, expected {:?}",
            grad_out.shape(),
            [b, cout, len]
        )));
    }
    let pad = k / 2;
    let mut gx = Tensor::zeros(&[b, cin, len]);
    let mut gw = Tensor::zeros(&[cout, cin, k]);
    let mut gb = vec![T::zero(); cout];
    let (xd, wd, gd) = (x.data(), w.data(), grad_out.data());
    for bi in 0..b {
        for o in 0..cout {
            let g = &gd[(bi * cout + o) * len..][..len];
            gb[o] += g.iter().copied().sum::<T>();
            for c in 0..cin {
                let xr = &xd[(bi * cin + c) * len..][..len];
                let gxr = &mut gx.data_mut()[(bi * cin + c) * len..][..len];
                for kk in 0..k {
                    let (lo, hi) = tap_range(len, kk, pad);
                    let src = lo + kk - pad..hi + kk - pad;
                    let wi = (o * cin + c) * k + kk;
                    gw.data_mut()[wi] += dot(&g[lo..hi], &xr[src.clone()]);
                    axpy(&mut gxr[src], wd[wi], &g[lo..hi]);
                }
            }
        }
    }
    Ok((gx, gw, gb))
}

/// Learnable scale/shift plus running statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnParams<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub run_mean: Vec<T>,
    pub run_var: Vec<T>,
}

impl<T: Scalar> BnParams<T> {
    pub fn new(channels: usize) -> Self {
        BnParams {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            run_mean: vec![T::zero(); channels],
            run_var: vec![T::one(); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics updated.
    Train,
    /// Running statistics; no state change.
    Eval,
}

#[derive(Debug, Clone)]
pub struct BnCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    gamma: Vec<T>,
    mode: Mode,
}

/// Per-channel normalization over batch and length. Train mode uses the
/// biased batch variance and updates the running statistics as
/// `(1 - momentum) * old + momentum * batch`.
pub fn batchnorm_forward<T: Scalar>(
    x: &Tensor<T>,
    p: &mut BnParams<T>,
    mode: Mode,
) -> Result<(Tensor<T>, BnCache<T>)> {
    let (y, cache, stats) = batchnorm_normalize(x, p, mode)?;
    if let Some((mean, var)) = stats {
        update_running_stats(p, &mean, &var);
    }
    Ok((y, cache))
}

pub(crate) fn update_running_stats<T: Scalar>(p: &mut BnParams<T>, mean: &[T], var: &[T]) {
    let momentum = T::of(BN_MOMENTUM);
    for ci in 0..p.channels() {
        p.run_mean[ci] = (T::one() - momentum) * p.run_mean[ci] + momentum * mean[ci];
        p.run_var[ci] = (T::one() - momentum) * p.run_var[ci] + momentum * var[ci];
    }
}

/// Normalization without touching the running statistics; in train mode the
/// batch mean and variance are returned for the caller to fold in.
#[allow(clippy::type_complexity)]
pub(crate) fn batchnorm_normalize<T: Scalar>(
    x: &Tensor<T>,
    p: &BnParams<T>,
    mode: Mode,
) -> Result<(Tensor<T>, BnCache<T>, Option<(Vec<T>, Vec<T>)>)> {
    let (b, c, len) = x.dims3("batchnorm input")?;
    if c != p.channels() {
        return Err(Error::ShapeMismatch(format!(
            "batchnorm: input has {c} channels, parameters {}",
            p.channels()
        )));
    }
    let m = b * len;
    if mode == Mode::Train && m < 2 {
        return Err(Error::BatchTooSmall(m));
    }
    let eps = T::of(BN_EPS);
    let xd = x.data();
    let channel = |bi: usize, ci: usize| &xd[(bi * c + ci) * len..][..len];

    let (mean, var) = match mode {
        Mode::Train => {
            let inv_m = T::one() / T::of(m as f64);
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ci in 0..c {
                let mut s = T::zero();
                for bi in 0..b {
                    s += channel(bi, ci).iter().copied().sum::<T>();
                }
                let mu = s * inv_m;
                let mut sq = T::zero();
                for bi in 0..b {
                    sq += channel(bi, ci).iter().map(|&v| (v - mu) * (v - mu)).sum::<T>();
                }
                mean[ci] = mu;
                var[ci] = sq * inv_m;
            }
            (mean, var)
        }
        Mode::Eval => (p.run_mean.clone(), p.run_var.clone()),
    };

    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = Tensor::zeros(&[b, c, len]);
    let mut y = Tensor::zeros(&[b, c, len]);
    for bi in 0..b {
        for ci in 0..c {
            let off = (bi * c + ci) * len;
            let src = channel(bi, ci);
            for t in 0..len {
                let h = (src[t] - mean[ci]) * inv_std[ci];
                xhat.data_mut()[off + t] = h;
                y.data_mut()[off + t] = p.gamma[ci] * h + p.beta[ci];
            }
        }
    }
    let stats = (mode == Mode::Train).then_some((mean, var));
    Ok((
        y,
        BnCache {
            xhat,
            inv_std,
            gamma: p.gamma.clone(),
            mode,
        },
        stats,
    ))
}

/// Gradients of [`batchnorm_forward`]; in train mode this includes the
/// dependence of the batch mean and variance on the input.
pub fn batchnorm_backward<T: Scalar>(
    cache: &BnCache<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    if grad_out.shape() != cache.xhat.shape() {
        return Err(Error::ShapeMismatch("batchnorm backward: grad_out shape".into()));
    }
    let (b, c, len) = grad_out.dims3("batchnorm grad")?;
    let (g, xh) = (grad_out.data(), cache.xhat.data());
    let mut ggamma = vec![T::zero(); c];
    let mut gbeta = vec![T::zero(); c];
    for bi in 0..b {
        for ci in 0..c {
            let off = (bi * c + ci) * len;
            gbeta[ci] += g[off..off + len].iter().copied().sum::<T>();
            ggamma[ci] += dot(&g[off..off + len], &xh[off..off + len]);
        }
    }
    let mut gx = Tensor::zeros(&[b, c, len]);
    let m = T::of((b * len) as f64);
    for bi in 0..b {
        for ci in 0..c {
            let off = (bi * c + ci) * len;
            let scale = cache.gamma[ci] * cache.inv_std[ci];
            let out = &mut gx.data_mut()[off..off + len];
            match cache.mode {
                Mode::Eval => {
                    for t in 0..len {
                        out[t] = g[off + t] * scale;
                    }
                }
                Mode::Train => {
                    // d xhat = gamma * g; sums of d xhat are gamma * gbeta and gamma * ggamma
                    for t in 0..len {
                        out[t] = scale / m * (m * g[off + t] - gbeta[ci] - xh[off + t] * ggamma[ci]);
                    }
                }
            }
        }
    }
    Ok((gx, ggamma, gbeta))
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    // NaN passes through so divergence is still detected downstream
    for v in y.data_mut() {
        if *v <= T::zero() {
            *v = T::zero();
        }
    }
    y
}

/// Subgradient convention: zero at `x = 0`.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let mut g = grad_out.clone();
    for (gi, &xi) in g.data_mut().iter_mut().zip(x.data()) {
        if xi <= T::zero() {
            *gi = T::zero();
        }
    }
    g
}

fn dense_dims<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (b, din) = x.dims2("dense input")?;
    let (dout, wdin) = w.dims2("dense weight")?;
    if din != wdin {
        return Err(Error::ShapeMismatch(format!(
            "dense: input width {din}, weight expects {wdin}"
        )));
    }
    Ok((b, din, dout))
}

/// `y = x w^T + b`
pub fn dense_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias: &[T]) -> Result<Tensor<T>> {
    let (b, din, dout) = dense_dims(x, w)?;
    if bias.len() != dout {
        return Err(Error::ShapeMismatch("dense: bias length".into()));
    }
    let mut y = Tensor::zeros(&[b, dout]);
    let (xd, wd) = (x.data(), w.data());
    for bi in 0..b {
        let xr = &xd[bi * din..][..din];
        for o in 0..dout {
            y.data_mut()[bi * dout + o] = bias[o] + dot(xr, &wd[o * din..][..din]);
        }
    }
    Ok(y)
}

/// Returns `(grad_x, grad_w, grad_b)` with `grad_w = grad_out^T x`.
pub fn dense_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Vec<T>)> {
    let (b, din, dout) = dense_dims(x, w)?;
    if grad_out.shape() != [b, dout] {
        return Err(Error::ShapeMismatch("dense backward: grad_out shape".into()));
    }
    let mut gx = Tensor::zeros(&[b, din]);
    let mut gw = Tensor::zeros(&[dout, din]);
    let mut gb = vec![T::zero(); dout];
    let (xd, wd, gd) = (x.data(), w.data(), grad_out.data());
    for bi in 0..b {
        let xr = &xd[bi * din..][..din];
        for o in 0..dout {
            let g = gd[bi * dout + o];
            gb[o] += g;
            if g != T::zero() {
                axpy(&mut gw.data_mut()[o * din..][..din], g, xr);
                axpy(&mut gx.data_mut()[bi * din..][..din], g, &wd[o * din..][..din]);
            }
        }
    }
    Ok((gx, gw, gb))
}
