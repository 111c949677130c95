//! Forward and backward kernels for the tape ops.
//!
//! Convolutions use cross-correlation semantics (no kernel flip) with zero
//! padding. All kernels are pure and deterministic: parallel loops write
//! disjoint output slots and reduce in fixed index order.

use crate::error::{Error, Result};
use crate::par;

use super::tensor::{idx4, Tensor};

/// Batch-norm statistics mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with batch statistics and report updated running stats.
    Train,
    /// Normalize with the stored running statistics.
    Eval,
}

pub(crate) fn check_kernel_geometry(
    op: &'static str,
    k: usize,
    stride: usize,
    padding: usize,
    h: usize,
    w: usize,
) -> Result<()> {
    if stride == 0 {
        return Err(Error::arg(op, "stride must be positive"));
    }
    if k == 0 || h + 2 * padding < k || w + 2 * padding < k {
        return Err(Error::arg(op, format!("kernel {k}x{k} does not fit padded input {h}x{w}+{padding}")));
    }
    // Stride-1 convs keep the spatial size, so the kernel must be odd and
    // the padding must match. Strided convs (the fixed 2x2 filter bank)
    // choose their own geometry.
    if stride == 1 {
        if k % 2 == 0 {
            return Err(Error::arg(op, format!("stride-1 kernel size {k} must be odd")));
        }
        if padding != (k - 1) / 2 {
            return Err(Error::arg(
                op,
                format!("stride-1 padding must be {} for kernel {k}, got {padding}", (k - 1) / 2),
            ));
        }
    }
    Ok(())
}

pub(crate) fn conv2d_out_hw(h: usize, w: usize, k: usize, stride: usize, padding: usize) -> (usize, usize) {
    ((h + 2 * padding - k) / stride + 1, (w + 2 * padding - k) / stride + 1)
}

/// Cross-correlation of `x` [B,C,H,W] with `kernel` [D,C,k,k] plus bias [D].
pub fn conv2d(x: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let (bsz, c_in, h, w) = x.dims4()?;
    let (d_out, kc, kh, kw) = kernel.dims4()?;
    if kh != kw {
        return Err(Error::arg("conv2d", format!("kernel must be square, got {kh}x{kw}")));
    }
    if kc != c_in {
        return Err(Error::shape(
            "conv2d",
            format!("kernel expects {kc} input channels, input has {c_in}"),
        ));
    }
    if bias.shape() != [d_out] {
        return Err(Error::shape(
            "conv2d",
            format!("bias shape {:?} does not match {d_out} output channels", bias.shape()),
        ));
    }
    check_kernel_geometry("conv2d", kh, stride, padding, h, w)?;
    let (ho, wo) = conv2d_out_hw(h, w, kh, stride, padding);

    let xd = x.data();
    let kd = kernel.data();
    let bd = bias.data();
    let mut out = vec![0.0; bsz * d_out * ho * wo];
    // One parallel slot per (batch, out-channel) plane.
    par::for_each_slot(&mut out, ho * wo, |slot, plane| {
        let b = slot / d_out;
        let d = slot % d_out;
        plane.fill(bd[d]);
        for c in 0..c_in {
            for u in 0..kh {
                for oi in 0..ho {
                    let i = (oi * stride + u) as isize - padding as isize;
                    if i < 0 || i >= h as isize {
                        continue;
                    }
                    let xrow = &xd[idx4(c_in, h, w, b, c, i as usize, 0)..][..w];
                    let krow = &kd[((d * c_in + c) * kh + u) * kw..][..kw];
                    let orow = &mut plane[oi * wo..][..wo];
                    for (oj, o) in orow.iter_mut().enumerate() {
                        let j0 = (oj * stride) as isize - padding as isize;
                        let mut acc = 0.0;
                        for (v, &kv) in krow.iter().enumerate() {
                            let j = j0 + v as isize;
                            if j >= 0 && (j as usize) < w {
                                acc += kv * xrow[j as usize];
                            }
                        }
                        *o += acc;
                    }
                }
            }
        }
    });
    Ok(Tensor::from_raw(vec![bsz, d_out, ho, wo], out))
}

/// Adjoint of [`conv2d`] in its data argument, targeting the given input size.
///
/// `conv2d_transpose` is this map at the minimal consistent output size; the
/// explicit size is needed when the strided forward floor-divides.
pub(crate) fn conv2d_adjoint_data(
    gy: &Tensor,
    kernel: &Tensor,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor> {
    let (bsz, d_in, h, w) = gy.dims4()?;
    let (kd_dim, c_out, kh, kw) = kernel.dims4()?;
    if kd_dim != d_in {
        return Err(Error::shape(
            "conv2d_transpose",
            format!("kernel expects {kd_dim} input channels, input has {d_in}"),
        ));
    }
    let gyd = gy.data();
    let kd = kernel.data();
    let mut out = vec![0.0; bsz * c_out * out_h * out_w];
    // Gather form of the scatter adjoint: out[i,j] sums every kernel tap
    // (u,v) whose forward window covered (i,j).
    par::for_each_slot(&mut out, out_h * out_w, |slot, plane| {
        let b = slot / c_out;
        let c = slot % c_out;
        for d in 0..d_in {
            for u in 0..kh {
                for oi in 0..h {
                    let i = (oi * stride + u) as isize - padding as isize;
                    if i < 0 || i >= out_h as isize {
                        continue;
                    }
                    let grow = &gyd[idx4(d_in, h, w, b, d, oi, 0)..][..w];
                    let krow = &kd[((d * c_out + c) * kh + u) * kw..][..kw];
                    let orow = &mut plane[i as usize * out_w..][..out_w];
                    for (oj, &g) in grow.iter().enumerate() {
                        let j0 = (oj * stride) as isize - padding as isize;
                        for (v, &kv) in krow.iter().enumerate() {
                            let j = j0 + v as isize;
                            if j >= 0 && (j as usize) < out_w {
                                orow[j as usize] += kv * g;
                            }
                        }
                    }
                }
            }
        }
    });
    Ok(Tensor::from_raw(vec![bsz, c_out, out_h, out_w], out))
}

/// Transposed convolution: exact adjoint of [`conv2d`] with the same kernel,
/// stride and padding. Input [B,D,H,W], kernel [D,C,k,k], output [B,C,H',W']
/// with H' = (H-1)·stride - 2·padding + k.
pub fn conv2d_transpose(x: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let (_, _, kh, kw) = kernel.dims4()?;
    if kh != kw {
        return Err(Error::arg("conv2d_transpose", format!("kernel must be square, got {kh}x{kw}")));
    }
    if stride == 0 {
        return Err(Error::arg("conv2d_transpose", "stride must be positive"));
    }
    let oh = (h - 1) * stride + kh;
    let ow = (w - 1) * stride + kw;
    if oh < 2 * padding + 1 || ow < 2 * padding + 1 {
        return Err(Error::arg("conv2d_transpose", "padding exceeds output extent"));
    }
    conv2d_adjoint_data(x, kernel, stride, padding, oh - 2 * padding, ow - 2 * padding)
}

/// Kernel gradient shared by conv2d and conv2d_transpose.
///
/// kg[d,c,u,v] = Σ_{b,i,j} a[b,d,i,j] · g[b,c, i·s+u-p, j·s+v-p]
/// where for conv2d (a, g) = (grad_out, input) and for the transpose
/// (a, g) = (input, grad_out).
pub(crate) fn correlation_kernel_grad(
    a: &Tensor,
    g: &Tensor,
    stride: usize,
    padding: usize,
    k: usize,
) -> Result<Tensor> {
    let (bsz, d_dim, ah, aw) = a.dims4()?;
    let (gb, c_dim, gh, gw) = g.dims4()?;
    debug_assert_eq!(bsz, gb);
    let ad = a.data();
    let gd = g.data();
    let mut out = vec![0.0; d_dim * c_dim * k * k];
    // One slot per (d, c) kernel block; sums run in fixed (b, i, j) order.
    par::for_each_slot(&mut out, k * k, |slot, block| {
        let d = slot / c_dim;
        let c = slot % c_dim;
        for u in 0..k {
            for v in 0..k {
                let mut acc = 0.0;
                for b in 0..bsz {
                    for i in 0..ah {
                        let gi = (i * stride + u) as isize - padding as isize;
                        if gi < 0 || gi >= gh as isize {
                            continue;
                        }
                        let arow = &ad[idx4(d_dim, ah, aw, b, d, i, 0)..][..aw];
                        let grow = &gd[idx4(c_dim, gh, gw, b, c, gi as usize, 0)..][..gw];
                        for (j, &av) in arow.iter().enumerate() {
                            let gj = (j * stride + v) as isize - padding as isize;
                            if gj >= 0 && (gj as usize) < gw {
                                acc += av * grow[gj as usize];
                            }
                        }
                    }
                }
                block[u * k + v] = acc;
            }
        }
    });
    Ok(Tensor::from_raw(vec![d_dim, c_dim, k, k], out))
}

/// Per-output-channel sum of `gy` over batch and space.
pub(crate) fn reduce_bias_grad(gy: &Tensor) -> Result<Tensor> {
    let (bsz, d, h, w) = gy.dims4()?;
    let gd = gy.data();
    let mut out = vec![0.0; d];
    for (c, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for b in 0..bsz {
            let plane = &gd[idx4(d, h, w, b, c, 0, 0)..][..h * w];
            for &v in plane {
                acc += v;
            }
        }
        *o = acc;
    }
    Ok(Tensor::from_raw(vec![d], out))
}

pub(crate) struct BnForward {
    pub out: Tensor,
    /// Per-channel mean actually used for normalization.
    pub mean: Vec<f64>,
    /// Per-channel 1/sqrt(var + eps) actually used.
    pub invstd: Vec<f64>,
    /// Updated running statistics (train mode only).
    pub running_update: Option<(Tensor, Tensor)>,
}

/// Batch normalization over (B, H, W) per channel.
///
/// Train mode normalizes with biased batch variance and reports running
/// stats updated as `momentum·old + (1-momentum)·new`, the running variance
/// using the unbiased estimate. Eval mode normalizes with the stored stats.
pub(crate) fn batchnorm(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mode: BnMode,
    running_mean: &Tensor,
    running_var: &Tensor,
    momentum: f64,
    eps: f64,
) -> Result<BnForward> {
    let (bsz, c_dim, h, w) = x.dims4()?;
    if bsz == 0 {
        return Err(Error::arg("batchnorm", "zero batch size"));
    }
    if eps <= 0.0 {
        return Err(Error::arg("batchnorm", "epsilon must be positive"));
    }
    for (name, t) in [("gamma", gamma), ("beta", beta), ("running_mean", running_mean), ("running_var", running_var)] {
        if t.shape() != [c_dim] {
            return Err(Error::shape(
                "batchnorm",
                format!("{name} shape {:?} does not match {c_dim} channels", t.shape()),
            ));
        }
    }
    let m = (bsz * h * w) as f64;
    let xd = x.data();
    let plane = h * w;

    let (mean, var) = match mode {
        BnMode::Train => {
            let stats: Vec<(f64, f64)> = par::map_indexed(c_dim, |c| {
                let mut sum = 0.0;
                let mut sumsq = 0.0;
                for b in 0..bsz {
                    let p = &xd[idx4(c_dim, h, w, b, c, 0, 0)..][..plane];
                    for &v in p {
                        sum += v;
                        sumsq += v * v;
                    }
                }
                let mu = sum / m;
                (mu, (sumsq / m - mu * mu).max(0.0))
            });
            (stats.iter().map(|s| s.0).collect::<Vec<_>>(), stats.iter().map(|s| s.1).collect::<Vec<_>>())
        }
        BnMode::Eval => (running_mean.to_vec(), running_var.to_vec()),
    };
    let invstd: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();

    let gd = gamma.data();
    let bd = beta.data();
    let mut out = vec![0.0; xd.len()];
    par::for_each_slot(&mut out, plane, |slot, oplane| {
        let c = slot % c_dim;
        let scale = gd[c] * invstd[c];
        let shift = bd[c] - mean[c] * scale;
        let xp = &xd[slot * plane..][..plane];
        for (o, &v) in oplane.iter_mut().zip(xp) {
            *o = v * scale + shift;
        }
    });

    let running_update = match mode {
        BnMode::Train => {
            let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
            let new_mean: Vec<f64> = running_mean
                .data()
                .iter()
                .zip(&mean)
                .map(|(&old, &new)| momentum * old + (1.0 - momentum) * new)
                .collect();
            let new_var: Vec<f64> = running_var
                .data()
                .iter()
                .zip(&var)
                .map(|(&old, &new)| momentum * old + (1.0 - momentum) * new * unbias)
                .collect();
            Some((Tensor::from_raw(vec![c_dim], new_mean), Tensor::from_raw(vec![c_dim], new_var)))
        }
        BnMode::Eval => None,
    };

    Ok(BnForward { out: Tensor::from_raw(vec![bsz, c_dim, h, w], out), mean, invstd, running_update })
}

pub(crate) struct BnGrads {
    pub dx: Tensor,
    pub dgamma: Tensor,
    pub dbeta: Tensor,
}

pub(crate) fn batchnorm_backward(
    x: &Tensor,
    gamma: &Tensor,
    mean: &[f64],
    invstd: &[f64],
    train: bool,
    gy: &Tensor,
) -> Result<BnGrads> {
    let (bsz, c_dim, h, w) = x.dims4()?;
    let plane = h * w;
    let m = (bsz * plane) as f64;
    let xd = x.data();
    let gyd = gy.data();
    let gd = gamma.data();

    // Per-channel reductions first (fixed order), then the elementwise pass.
    let sums: Vec<(f64, f64)> = par::map_indexed(c_dim, |c| {
        let mut s_gy = 0.0;
        let mut s_gy_xhat = 0.0;
        for b in 0..bsz {
            let base = idx4(c_dim, h, w, b, c, 0, 0);
            let xp = &xd[base..][..plane];
            let gp = &gyd[base..][..plane];
            for (&xv, &gv) in xp.iter().zip(gp) {
                s_gy += gv;
                s_gy_xhat += gv * (xv - mean[c]) * invstd[c];
            }
        }
        (s_gy, s_gy_xhat)
    });

    let mut dx = vec![0.0; xd.len()];
    par::for_each_slot(&mut dx, plane, |slot, dplane| {
        let c = slot % c_dim;
        let (s_gy, s_gy_xhat) = sums[c];
        let xp = &xd[slot * plane..][..plane];
        let gp = &gyd[slot * plane..][..plane];
        if train {
            let a = gd[c] * invstd[c];
            for ((d, &xv), &gv) in dplane.iter_mut().zip(xp).zip(gp) {
                let xhat = (xv - mean[c]) * invstd[c];
                *d = a * (gv - s_gy / m - xhat * s_gy_xhat / m);
            }
        } else {
            let a = gd[c] * invstd[c];
            for (d, &gv) in dplane.iter_mut().zip(gp) {
                *d = a * gv;
            }
        }
    });

    let dgamma: Vec<f64> = sums.iter().map(|s| s.1).collect();
    let dbeta: Vec<f64> = sums.iter().map(|s| s.0).collect();
    Ok(BnGrads {
        dx: Tensor::from_raw(vec![bsz, c_dim, h, w], dx),
        dgamma: Tensor::from_raw(vec![c_dim], dgamma),
        dbeta: Tensor::from_raw(vec![c_dim], dbeta),
    })
}

pub(crate) fn relu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    Tensor::from_raw(x.shape().to_vec(), data)
}

/// Subgradient convention: zero at x = 0.
pub(crate) fn relu_backward(x: &Tensor, gy: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(gy.data())
        .map(|(&xv, &gv)| if xv > 0.0 { gv } else { 0.0 })
        .collect();
    Tensor::from_raw(x.shape().to_vec(), data)
}

pub(crate) fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::shape("add", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Ok(Tensor::from_raw(a.shape().to_vec(), data))
}

pub(crate) fn scale(x: &Tensor, c: f64) -> Tensor {
    let data = x.data().iter().map(|v| v * c).collect();
    Tensor::from_raw(x.shape().to_vec(), data)
}

/// Add a per-channel bias [C] to a [B,C,H,W] tensor.
pub(crate) fn bias_add(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (bsz, c_dim, h, w) = x.dims4()?;
    if bias.shape() != [c_dim] {
        return Err(Error::shape(
            "bias_add",
            format!("bias shape {:?} does not match {c_dim} channels", bias.shape()),
        ));
    }
    let bd = bias.data();
    let plane = h * w;
    let mut out = x.to_vec();
    par::for_each_slot(&mut out, plane, |slot, p| {
        let b = bd[slot % c_dim];
        for v in p {
            *v += b;
        }
    });
    Ok(Tensor::from_raw(vec![bsz, c_dim, h, w], out))
}

pub(crate) fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::arg("concat", "need at least one input"));
    }
    let (bsz, _, h, w) = parts[0].dims4()?;
    let mut c_total = 0;
    for p in parts {
        let (pb, pc, ph, pw) = p.dims4()?;
        if (pb, ph, pw) != (bsz, h, w) {
            return Err(Error::shape(
                "concat",
                format!("incompatible part shape {:?} vs [B={bsz},_,{h},{w}]", p.shape()),
            ));
        }
        c_total += pc;
    }
    let plane = h * w;
    let mut out = vec![0.0; bsz * c_total * plane];
    for b in 0..bsz {
        let mut c_off = 0;
        for p in parts {
            let pc = p.shape()[1];
            let src = &p.data()[b * pc * plane..][..pc * plane];
            out[(b * c_total + c_off) * plane..][..pc * plane].copy_from_slice(src);
            c_off += pc;
        }
    }
    Ok(Tensor::from_raw(vec![bsz, c_total, h, w], out))
}

pub(crate) fn slice_channels(x: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let (bsz, c_dim, h, w) = x.dims4()?;
    if start + len > c_dim || len == 0 {
        return Err(Error::shape(
            "slice",
            format!("channel range {start}..{} out of 0..{c_dim}", start + len),
        ));
    }
    let plane = h * w;
    let mut out = vec![0.0; bsz * len * plane];
    for b in 0..bsz {
        let src = &x.data()[(b * c_dim + start) * plane..][..len * plane];
        out[b * len * plane..][..len * plane].copy_from_slice(src);
    }
    Ok(Tensor::from_raw(vec![bsz, len, h, w], out))
}

pub(crate) fn sum_all(x: &Tensor) -> Tensor {
    let s: f64 = x.data().iter().sum();
    Tensor::from_raw(vec![1], vec![s])
}

pub(crate) fn l1_norm(x: &Tensor) -> Tensor {
    let s: f64 = x.data().iter().map(|v| v.abs()).sum();
    Tensor::from_raw(vec![1], vec![s])
}

pub(crate) fn l2_norm_squared(x: &Tensor) -> Tensor {
    let s: f64 = x.data().iter().map(|v| v * v).sum();
    Tensor::from_raw(vec![1], vec![s])
}
