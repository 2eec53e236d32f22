//! Parameterised building blocks. Each layer stores indices into a
//! [`ParamSet`]; gradients accumulate into a second set with the same layout.

use rand::Rng;

use super::ops::{self, NormCache};
use super::params::ParamSet;
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct Conv {
    pub weight: usize,
    pub bias: usize,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

impl Conv {
    pub fn new<R: Rng>(p: &mut ParamSet, rng: &mut R, name: &str, cin: usize, cout: usize, k: usize) -> Self {
        let weight = p.add_he(rng, format!("{name}.weight"), &[cout, cin, k, k], cin * k * k);
        let bias = p.add_const(format!("{name}.bias"), &[cout], 0.0);
        Conv { weight, bias, cin, cout, k }
    }

    pub fn forward(&self, p: &ParamSet, x: &Tensor) -> Tensor {
        ops::conv2d(x, p.get(self.weight), p.get(self.bias), self.cout, self.k)
    }

    pub fn backward(&self, p: &ParamSet, x: &Tensor, dy: &Tensor, g: &mut ParamSet) -> Tensor {
        let mut dw = std::mem::take(&mut g.entries[self.weight].values);
        let mut db = std::mem::take(&mut g.entries[self.bias].values);
        let dx = ops::conv2d_backward(x, p.get(self.weight), dy, self.k, &mut dw, &mut db);
        g.entries[self.weight].values = dw;
        g.entries[self.bias].values = db;
        dx
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Norm {
    pub gamma: usize,
    pub beta: usize,
}

impl Norm {
    pub fn new(p: &mut ParamSet, name: &str, c: usize) -> Self {
        Norm {
            gamma: p.add_const(format!("{name}.gamma"), &[c], 1.0),
            beta: p.add_const(format!("{name}.beta"), &[c], 0.0),
        }
    }

    pub fn forward(&self, p: &ParamSet, x: &Tensor) -> (Tensor, NormCache) {
        ops::instance_norm(x, p.get(self.gamma), p.get(self.beta))
    }

    pub fn backward(&self, p: &ParamSet, cache: &NormCache, dy: &Tensor, g: &mut ParamSet) -> Tensor {
        let mut dg = std::mem::take(&mut g.entries[self.gamma].values);
        let mut db = std::mem::take(&mut g.entries[self.beta].values);
        let dx = ops::instance_norm_backward(cache, p.get(self.gamma), dy, &mut dg, &mut db);
        g.entries[self.gamma].values = dg;
        g.entries[self.beta].values = db;
        dx
    }
}

/// conv3x3 - instance norm - ReLU, twice.
#[derive(Clone, Copy, Debug)]
pub struct ConvBlock {
    pub conv1: Conv,
    pub norm1: Norm,
    pub conv2: Conv,
    pub norm2: Norm,
}

#[derive(Clone, Debug)]
pub struct BlockCache {
    x: Tensor,
    n1: NormCache,
    a1: Tensor,
    n2: NormCache,
    pub out: Tensor,
}

impl ConvBlock {
    pub fn new<R: Rng>(p: &mut ParamSet, rng: &mut R, name: &str, cin: usize, cout: usize) -> Self {
        ConvBlock {
            conv1: Conv::new(p, rng, &format!("{name}.conv1"), cin, cout, 3),
            norm1: Norm::new(p, &format!("{name}.norm1"), cout),
            conv2: Conv::new(p, rng, &format!("{name}.conv2"), cout, cout, 3),
            norm2: Norm::new(p, &format!("{name}.norm2"), cout),
        }
    }

    pub fn forward(&self, p: &ParamSet, x: &Tensor) -> BlockCache {
        let y1 = self.conv1.forward(p, x);
        let (z1, n1) = self.norm1.forward(p, &y1);
        let a1 = ops::relu(&z1);
        let y2 = self.conv2.forward(p, &a1);
        let (z2, n2) = self.norm2.forward(p, &y2);
        let out = ops::relu(&z2);
        BlockCache {
            x: x.clone(),
            n1,
            a1,
            n2,
            out,
        }
    }

    pub fn backward(&self, p: &ParamSet, c: &BlockCache, dout: &Tensor, g: &mut ParamSet) -> Tensor {
        let dz2 = ops::relu_backward(&c.out, dout);
        let dy2 = self.norm2.backward(p, &c.n2, &dz2, g);
        let da1 = self.conv2.backward(p, &c.a1, &dy2, g);
        let dz1 = ops::relu_backward(&c.a1, &da1);
        let dy1 = self.norm1.backward(p, &c.n1, &dz1, g);
        self.conv1.backward(p, &c.x, &dy1, g)
    }
}

/// Additive attention gate: the skip feature is scaled per pixel by
/// sigmoid(psi(ReLU(Ws * skip + Wg * query))).
#[derive(Clone, Copy, Debug)]
pub struct AttentionGate {
    pub skip_proj: Conv,
    pub query_proj: Conv,
    pub psi: Conv,
}

#[derive(Clone, Debug)]
pub struct GateCache {
    skip: Tensor,
    query: Tensor,
    hidden: Tensor,
    pub alpha: Tensor,
    pub out: Tensor,
}

impl AttentionGate {
    pub fn new<R: Rng>(p: &mut ParamSet, rng: &mut R, name: &str, cskip: usize, cquery: usize, inter: usize) -> Self {
        AttentionGate {
            skip_proj: Conv::new(p, rng, &format!("{name}.skip"), cskip, inter, 1),
            query_proj: Conv::new(p, rng, &format!("{name}.query"), cquery, inter, 1),
            psi: Conv::new(p, rng, &format!("{name}.psi"), inter, 1, 1),
        }
    }

    pub fn forward(&self, p: &ParamSet, skip: &Tensor, query: &Tensor) -> GateCache {
        let mut a = self.skip_proj.forward(p, skip);
        a.add_assign(&self.query_proj.forward(p, query));
        let hidden = ops::relu(&a);
        let alpha = ops::sigmoid(&self.psi.forward(p, &hidden));
        let mut out = skip.clone();
        let n = skip.plane();
        for c in 0..skip.c {
            for (o, a) in out.data[c * n..(c + 1) * n].iter_mut().zip(&alpha.data) {
                *o *= a;
            }
        }
        GateCache {
            skip: skip.clone(),
            query: query.clone(),
            hidden,
            alpha,
            out,
        }
    }

    /// Returns (d skip, d query).
    pub fn backward(&self, p: &ParamSet, c: &GateCache, dout: &Tensor, g: &mut ParamSet) -> (Tensor, Tensor) {
        let n = c.skip.plane();
        let mut dskip = dout.clone();
        let mut dalpha = Tensor::zeros(1, c.skip.h, c.skip.w);
        for ch in 0..c.skip.c {
            let range = ch * n..(ch + 1) * n;
            for ((ds, s), (a, da)) in dskip.data[range.clone()]
                .iter_mut()
                .zip(&c.skip.data[range])
                .zip(c.alpha.data.iter().zip(dalpha.data.iter_mut()))
            {
                *da += *ds * s;
                *ds *= a;
            }
        }
        let dpsi = ops::sigmoid_backward(&c.alpha, &dalpha);
        let dhidden = self.psi.backward(p, &c.hidden, &dpsi, g);
        let da = ops::relu_backward(&c.hidden, &dhidden);
        dskip.add_assign(&self.skip_proj.backward(p, &c.skip, &da, g));
        let dquery = self.query_proj.backward(p, &c.query, &da, g);
        (dskip, dquery)
    }
}

/// Squeeze-excite scaling of input channels: global average, a two-layer
/// bottleneck, and a sigmoid gate per channel.
#[derive(Clone, Copy, Debug)]
pub struct ChannelAttention {
    pub fc1_w: usize,
    pub fc1_b: usize,
    pub fc2_w: usize,
    pub fc2_b: usize,
    pub channels: usize,
    pub hidden: usize,
}

#[derive(Clone, Debug)]
pub struct ChannelCache {
    x: Tensor,
    squeeze: Vec<f64>,
    hidden: Vec<f64>,
    pub scale: Vec<f64>,
    pub out: Tensor,
}

impl ChannelAttention {
    pub fn new<R: Rng>(p: &mut ParamSet, rng: &mut R, name: &str, channels: usize, hidden: usize) -> Self {
        ChannelAttention {
            fc1_w: p.add_he(rng, format!("{name}.fc1.weight"), &[hidden, channels], channels),
            fc1_b: p.add_const(format!("{name}.fc1.bias"), &[hidden], 0.1),
            fc2_w: p.add_he(rng, format!("{name}.fc2.weight"), &[channels, hidden], hidden),
            fc2_b: p.add_const(format!("{name}.fc2.bias"), &[channels], 1.0),
            channels,
            hidden,
        }
    }

    pub fn forward(&self, p: &ParamSet, x: &Tensor) -> ChannelCache {
        let n = x.plane() as f64;
        let squeeze: Vec<f64> = (0..x.c).map(|c| x.channel(c).iter().sum::<f64>() / n).collect();
        let (w1, b1, w2, b2) = (p.get(self.fc1_w), p.get(self.fc1_b), p.get(self.fc2_w), p.get(self.fc2_b));
        let hidden: Vec<f64> = (0..self.hidden)
            .map(|j| (b1[j] + (0..self.channels).map(|c| w1[j * self.channels + c] * squeeze[c]).sum::<f64>()).max(0.0))
            .collect();
        let scale: Vec<f64> = (0..self.channels)
            .map(|c| ops::sigmoid_scalar(b2[c] + (0..self.hidden).map(|j| w2[c * self.hidden + j] * hidden[j]).sum::<f64>()))
            .collect();
        let mut out = x.clone();
        for (c, s) in scale.iter().enumerate() {
            out.channel_mut(c).iter_mut().for_each(|v| *v *= s);
        }
        ChannelCache {
            x: x.clone(),
            squeeze,
            hidden,
            scale,
            out,
        }
    }

    pub fn backward(&self, p: &ParamSet, c: &ChannelCache, dout: &Tensor, g: &mut ParamSet) -> Tensor {
        let n = c.x.plane() as f64;
        let (ch, hd) = (self.channels, self.hidden);
        let dz: Vec<f64> = (0..ch)
            .map(|k| {
                let ds: f64 = dout.channel(k).iter().zip(c.x.channel(k)).map(|(d, x)| d * x).sum();
                ds * c.scale[k] * (1.0 - c.scale[k])
            })
            .collect();
        let w1 = p.get(self.fc1_w).to_vec();
        let w2 = p.get(self.fc2_w).to_vec();
        let mut dhidden = vec![0.0; hd];
        for k in 0..ch {
            g.get_mut(self.fc2_b)[k] += dz[k];
            for j in 0..hd {
                g.get_mut(self.fc2_w)[k * hd + j] += dz[k] * c.hidden[j];
                dhidden[j] += w2[k * hd + j] * dz[k];
            }
        }
        let mut dsqueeze = vec![0.0; ch];
        for j in 0..hd {
            if c.hidden[j] <= 0.0 {
                continue;
            }
            g.get_mut(self.fc1_b)[j] += dhidden[j];
            for k in 0..ch {
                g.get_mut(self.fc1_w)[j * ch + k] += dhidden[j] * c.squeeze[k];
                dsqueeze[k] += w1[j * ch + k] * dhidden[j];
            }
        }
        let mut dx = dout.clone();
        for k in 0..ch {
            let add = dsqueeze[k] / n;
            dx.channel_mut(k).iter_mut().for_each(|v| *v = *v * c.scale[k] + add);
        }
        dx
    }
}

/// Convolutional GRU with 3x3 gates over `[input; hidden]`.
#[derive(Clone, Copy, Debug)]
pub struct ConvGru {
    pub update: Conv,
    pub reset: Conv,
    pub candidate: Conv,
    pub channels: usize,
}

#[derive(Clone, Debug)]
pub struct GruCache {
    xh: Tensor,
    xrh: Tensor,
    hidden: Tensor,
    z: Tensor,
    r: Tensor,
    n: Tensor,
    pub out: Tensor,
}

impl ConvGru {
    pub fn new<R: Rng>(p: &mut ParamSet, rng: &mut R, name: &str, cin: usize, channels: usize) -> Self {
        ConvGru {
            update: Conv::new(p, rng, &format!("{name}.update"), cin + channels, channels, 3),
            reset: Conv::new(p, rng, &format!("{name}.reset"), cin + channels, channels, 3),
            candidate: Conv::new(p, rng, &format!("{name}.candidate"), cin + channels, channels, 3),
            channels,
        }
    }

    pub fn forward(&self, p: &ParamSet, x: &Tensor, hidden: &Tensor) -> GruCache {
        let xh = Tensor::concat(&[x, hidden]);
        let z = ops::sigmoid(&self.update.forward(p, &xh));
        let r = ops::sigmoid(&self.reset.forward(p, &xh));
        let xrh = Tensor::concat(&[x, &ops::mul(&r, hidden)]);
        let n = ops::tanh(&self.candidate.forward(p, &xrh));
        let mut out = hidden.clone();
        for ((o, zi), ni) in out.data.iter_mut().zip(&z.data).zip(&n.data) {
            *o = (1.0 - zi) * *o + zi * ni;
        }
        GruCache {
            xh,
            xrh,
            hidden: hidden.clone(),
            z,
            r,
            n,
            out,
        }
    }

    /// Returns (d input, d previous hidden).
    pub fn backward(&self, p: &ParamSet, c: &GruCache, dout: &Tensor, g: &mut ParamSet) -> (Tensor, Tensor) {
        let cin = c.xh.c - self.channels;
        let mut dz = dout.clone();
        let mut dn = dout.clone();
        let mut dh = dout.clone();
        for i in 0..dout.len() {
            let (zi, ni, hi) = (c.z.data[i], c.n.data[i], c.hidden.data[i]);
            dz.data[i] *= ni - hi;
            dn.data[i] *= zi;
            dh.data[i] *= 1.0 - zi;
        }
        let dq = ops::tanh_backward(&c.n, &dn);
        let dxrh = self.candidate.backward(p, &c.xrh, &dq, g);
        let mut parts = dxrh.split(&[cin, self.channels]);
        let drh = parts.pop().unwrap();
        let mut dx = parts.pop().unwrap();
        let mut dr = drh.clone();
        for i in 0..drh.len() {
            dr.data[i] *= c.hidden.data[i];
            dh.data[i] += drh.data[i] * c.r.data[i];
        }
        let dqz = ops::sigmoid_backward(&c.z, &dz);
        let dqr = ops::sigmoid_backward(&c.r, &dr);
        let mut dxh = self.update.backward(p, &c.xh, &dqz, g);
        dxh.add_assign(&self.reset.backward(p, &c.xh, &dqr, g));
        let mut parts = dxh.split(&[cin, self.channels]);
        dh.add_assign(&parts.pop().unwrap());
        dx.add_assign(&parts.pop().unwrap());
        (dx, dh)
    }
}
