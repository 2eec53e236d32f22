//! Differentiable primitives. Every `*_backward` takes the forward inputs (or
//! a cache) plus the output gradient and returns the input gradient,
//! accumulating parameter gradients into caller-provided slices.

use super::tensor::Tensor;

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Four-lane dot product so the reduction vectorises; summation order is
/// fixed, so results are deterministic.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Copies every channel into a zero-bordered plane of width `w + 2 pad`.
/// Shifting a flat slice of the padded plane by `ky * stride + kx` then
/// visits all taps of one kernel offset in a single contiguous pass.
fn pad_planes(x: &Tensor, pad: usize) -> (Vec<f64>, usize, usize) {
    let (c, h, w) = x.dims();
    let stride = w + 2 * pad;
    let plane = (h + 2 * pad) * stride;
    let mut out = vec![0.0; c * plane];
    for ci in 0..c {
        let src = x.channel(ci);
        for r in 0..h {
            let o = ci * plane + (r + pad) * stride + pad;
            out[o..o + w].copy_from_slice(&src[r * w..(r + 1) * w]);
        }
    }
    (out, stride, plane)
}

/// Same-size 2-D convolution (cross-correlation), odd square kernel, zero
/// padding. `weight` is laid out `[cout][cin][k][k]`.
pub fn conv2d(x: &Tensor, weight: &[f64], bias: &[f64], cout: usize, k: usize) -> Tensor {
    let (cin, h, w) = x.dims();
    debug_assert_eq!(weight.len(), cout * cin * k * k);
    let pad = k / 2;
    let (xp, stride, plane) = pad_planes(x, pad);
    // output rows use the padded stride; the trailing 2*pad columns are scratch
    let len = (h - 1) * stride + w;
    let mut acc = vec![0.0; len];
    let mut y = Tensor::zeros(cout, h, w);
    for co in 0..cout {
        acc.iter_mut().for_each(|v| *v = bias[co]);
        for ci in 0..cin {
            let inp = &xp[ci * plane..(ci + 1) * plane];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = weight[((co * cin + ci) * k + ky) * k + kx];
                    let off = ky * stride + kx;
                    axpy(&mut acc, wv, &inp[off..off + len]);
                }
            }
        }
        let out = y.channel_mut(co);
        for r in 0..h {
            out[r * w..(r + 1) * w].copy_from_slice(&acc[r * stride..r * stride + w]);
        }
    }
    y
}

/// Returns `dx`; adds into `dweight` and `dbias`.
pub fn conv2d_backward(
    x: &Tensor,
    weight: &[f64],
    dy: &Tensor,
    k: usize,
    dweight: &mut [f64],
    dbias: &mut [f64],
) -> Tensor {
    let (cin, h, w) = x.dims();
    let cout = dy.c;
    let pad = k / 2;
    let (xp, stride, plane) = pad_planes(x, pad);
    let len = (h - 1) * stride + w;
    let mut dxp = vec![0.0; cin * plane];
    let mut g = vec![0.0; len];
    for co in 0..cout {
        let gc = dy.channel(co);
        dbias[co] += gc.iter().sum::<f64>();
        // scratch columns stay zero so they contribute nothing below
        for r in 0..h {
            g[r * stride..r * stride + w].copy_from_slice(&gc[r * w..(r + 1) * w]);
        }
        for ci in 0..cin {
            let inp = &xp[ci * plane..(ci + 1) * plane];
            let dinp = &mut dxp[ci * plane..(ci + 1) * plane];
            for ky in 0..k {
                for kx in 0..k {
                    let widx = ((co * cin + ci) * k + ky) * k + kx;
                    let off = ky * stride + kx;
                    dweight[widx] += dot(&g, &inp[off..off + len]);
                    axpy(&mut dinp[off..off + len], weight[widx], &g);
                }
            }
        }
    }
    let mut dx = Tensor::zeros(cin, h, w);
    for ci in 0..cin {
        let d = dx.channel_mut(ci);
        for r in 0..h {
            let o = ci * plane + (r + pad) * stride + pad;
            d[r * w..(r + 1) * w].copy_from_slice(&dxp[o..o + w]);
        }
    }
    dx
}

/// Per-channel statistics kept for the instance-norm backward pass.
#[derive(Clone, Debug)]
pub struct NormCache {
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
}

pub const NORM_EPS: f64 = 1e-5;

/// Instance normalization with learned per-channel affine.
pub fn instance_norm(x: &Tensor, gamma: &[f64], beta: &[f64]) -> (Tensor, NormCache) {
    let n = x.plane() as f64;
    let mut xhat = Tensor::zeros(x.c, x.h, x.w);
    let mut y = Tensor::zeros(x.c, x.h, x.w);
    let mut inv_std = Vec::with_capacity(x.c);
    for c in 0..x.c {
        let src = x.channel(c);
        let mean = src.iter().sum::<f64>() / n;
        let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let is = 1.0 / (var + NORM_EPS).sqrt();
        inv_std.push(is);
        for (o, v) in xhat.channel_mut(c).iter_mut().zip(src) {
            *o = (v - mean) * is;
        }
        for (o, v) in y.channel_mut(c).iter_mut().zip(xhat.channel(c)) {
            *o = gamma[c] * v + beta[c];
        }
    }
    (y, NormCache { xhat, inv_std })
}

pub fn instance_norm_backward(
    cache: &NormCache,
    gamma: &[f64],
    dy: &Tensor,
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Tensor {
    let n = dy.plane() as f64;
    let mut dx = Tensor::zeros(dy.c, dy.h, dy.w);
    for c in 0..dy.c {
        let g = dy.channel(c);
        let xh = cache.xhat.channel(c);
        dgamma[c] += dot(g, xh);
        dbeta[c] += g.iter().sum::<f64>();
        let sum_dxh: f64 = g.iter().sum::<f64>() * gamma[c];
        let sum_dxh_xh: f64 = dot(g, xh) * gamma[c];
        let scale = cache.inv_std[c] / n;
        for ((o, gi), xi) in dx.channel_mut(c).iter_mut().zip(g).zip(xh) {
            *o = scale * (n * gi * gamma[c] - sum_dxh - xi * sum_dxh_xh);
        }
    }
    dx
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Gradient through a ReLU given its output.
pub fn relu_backward(out: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    for (d, o) in dx.data.iter_mut().zip(&out.data) {
        if *o <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

#[inline]
pub fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// Gradient through a sigmoid given its output.
pub fn sigmoid_backward(out: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    for (d, s) in dx.data.iter_mut().zip(&out.data) {
        *d *= s * (1.0 - s);
    }
    dx
}

pub fn tanh(x: &Tensor) -> Tensor {
    x.map(f64::tanh)
}

/// Gradient through tanh given its output.
pub fn tanh_backward(out: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    for (d, t) in dx.data.iter_mut().zip(&out.data) {
        *d *= 1.0 - t * t;
    }
    dx
}

/// 2x2 max pooling; also returns the flat source index of each maximum.
pub fn maxpool2(x: &Tensor) -> (Tensor, Vec<usize>) {
    let (c, h, w) = x.dims();
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Tensor::zeros(c, oh, ow);
    let mut arg = vec![0; c * oh * ow];
    for ch in 0..c {
        for r in 0..oh {
            for q in 0..ow {
                let mut best = usize::MAX;
                let mut bv = f64::NEG_INFINITY;
                for (dr, dq) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let idx = (ch * h + 2 * r + dr) * w + 2 * q + dq;
                    if x.data[idx] > bv {
                        bv = x.data[idx];
                        best = idx;
                    }
                }
                let o = (ch * oh + r) * ow + q;
                y.data[o] = bv;
                arg[o] = best;
            }
        }
    }
    (y, arg)
}

pub fn maxpool2_backward(input_dims: (usize, usize, usize), arg: &[usize], dy: &Tensor) -> Tensor {
    let (c, h, w) = input_dims;
    let mut dx = Tensor::zeros(c, h, w);
    for (o, &src) in arg.iter().enumerate() {
        dx.data[src] += dy.data[o];
    }
    dx
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2(x: &Tensor) -> Tensor {
    let (c, h, w) = x.dims();
    let mut y = Tensor::zeros(c, 2 * h, 2 * w);
    for ch in 0..c {
        for r in 0..2 * h {
            for q in 0..2 * w {
                y.data[(ch * 2 * h + r) * 2 * w + q] = x.data[(ch * h + r / 2) * w + q / 2];
            }
        }
    }
    y
}

pub fn upsample2_backward(dy: &Tensor) -> Tensor {
    let (c, h2, w2) = dy.dims();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Tensor::zeros(c, h, w);
    for ch in 0..c {
        for r in 0..h2 {
            for q in 0..w2 {
                dx.data[(ch * h + r / 2) * w + q / 2] += dy.data[(ch * h2 + r) * w2 + q];
            }
        }
    }
    dx
}

/// Element-wise product.
pub fn mul(a: &Tensor, b: &Tensor) -> Tensor {
    let mut out = a.clone();
    for (o, v) in out.data.iter_mut().zip(&b.data) {
        *o *= v;
    }
    out
}
