//! Central finite-difference checks of every hand-written backward pass.
//!
//! Each check builds a seeded random layer and inputs, contracts the output
//! with a random cotangent, and compares the analytic gradient (parameters
//! and every input) to central differences. The result is the relative
//! error `|a - n| / (|a| + |n|)` over the concatenated gradient vectors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{AttentionGate, ChannelAttention, Conv, ConvBlock, ConvGru, Norm};
use super::{ops, w_ce_loss, w_dice_loss, ParamSet, Tensor, UNet, UNetSpec};

pub const FD_STEP: f64 = 1e-5;

/// Largest relative error a passing check may report.
pub const GRAD_TOL: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub name: &'static str,
    pub rel_err: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.rel_err < GRAD_TOL
    }
}

pub(crate) fn random_tensor(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor {
    Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Values kept away from 0 and 1 so log and sigmoid terms stay smooth.
pub(crate) fn unit_tensor(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor {
    Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| rng.gen_range(0.02..0.98)).collect()).unwrap()
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / (na + nb).max(1e-12)
}

fn numeric_param_grad(p: &ParamSet, f: &dyn Fn(&ParamSet) -> f64) -> Vec<f64> {
    let mut q = p.clone();
    let mut out = Vec::with_capacity(p.count());
    for e in 0..p.entries.len() {
        for i in 0..p.entries[e].values.len() {
            let v = q.entries[e].values[i];
            q.entries[e].values[i] = v + FD_STEP;
            let up = f(&q);
            q.entries[e].values[i] = v - FD_STEP;
            let down = f(&q);
            q.entries[e].values[i] = v;
            out.push((up - down) / (2.0 * FD_STEP));
        }
    }
    out
}

fn numeric_input_grad(x: &Tensor, f: &dyn Fn(&Tensor) -> f64) -> Vec<f64> {
    let mut y = x.clone();
    (0..x.len())
        .map(|i| {
            let v = y.data[i];
            y.data[i] = v + FD_STEP;
            let up = f(&y);
            y.data[i] = v - FD_STEP;
            let down = f(&y);
            y.data[i] = v;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

fn flat(g: &ParamSet) -> Vec<f64> {
    g.entries.iter().flat_map(|e| e.values.iter().copied()).collect()
}

/// Worst of several (analytic, numeric) pairs.
fn worst(pairs: &[(&[f64], &[f64])]) -> f64 {
    pairs.iter().map(|(a, n)| rel_err(a, n)).fold(0.0, f64::max)
}

fn jitter(p: &mut ParamSet, rng: &mut ChaCha8Rng, amp: f64) {
    for e in &mut p.entries {
        e.values.iter_mut().for_each(|v| *v += rng.gen_range(-amp..amp));
    }
}

pub fn check_conv(seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut err: f64 = 0.0;
    for k in [1, 3] {
        let mut p = ParamSet::default();
        let conv = Conv::new(&mut p, &mut rng, "c", 2, 3, k);
        jitter(&mut p, &mut rng, 0.3);
        let x = random_tensor(&mut rng, 2, 4, 4);
        let r = random_tensor(&mut rng, 3, 4, 4);
        let mut g = p.zeros_like();
        let dx = conv.backward(&p, &x, &r, &mut g);
        let np = numeric_param_grad(&p, &|q| dot(&conv.forward(q, &x), &r));
        let nx = numeric_input_grad(&x, &|y| dot(&conv.forward(&p, y), &r));
        err = err.max(worst(&[(&flat(&g), &np), (&dx.data, &nx)]));
    }
    GradCheck { name: "conv", rel_err: err }
}

pub fn check_norm(seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamSet::default();
    let norm = Norm::new(&mut p, "n", 2);
    jitter(&mut p, &mut rng, 0.2);
    let x = random_tensor(&mut rng, 2, 4, 4);
    let r = random_tensor(&mut rng, 2, 4, 4);
    let mut g = p.zeros_like();
    let (_, cache) = norm.forward(&p, &x);
    let dx = norm.backward(&p, &cache, &r, &mut g);
    let np = numeric_param_grad(&p, &|q| dot(&norm.forward(q, &x).0, &r));
    let nx = numeric_input_grad(&x, &|y| dot(&norm.forward(&p, y).0, &r));
    GradCheck {
        name: "instance_norm",
        rel_err: worst(&[(&flat(&g), &np), (&dx.data, &nx)]),
    }
}

pub fn check_conv_block(seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamSet::default();
    let block = ConvBlock::new(&mut p, &mut rng, "b", 2, 3);
    jitter(&mut p, &mut rng, 0.2);
    let x = random_tensor(&mut rng, 2, 4, 4);
    let r = random_tensor(&mut rng, 3, 4, 4);
    let mut g = p.zeros_like();
    let cache = block.forward(&p, &x);
    let dx = block.backward(&p, &cache, &r, &mut g);
    let np = numeric_param_grad(&p, &|q| dot(&block.forward(q, &x).out, &r));
    let nx = numeric_input_grad(&x, &|y| dot(&block.forward(&p, y).out, &r));
    GradCheck {
        name: "conv_block",
        rel_err: worst(&[(&flat(&g), &np), (&dx.data, &nx)]),
    }
}

pub fn check_pool_upsample(seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor(&mut rng, 2, 4, 4);
    let r = random_tensor(&mut rng, 2, 2, 2);
    let (_, arg) = ops::maxpool2(&x);
    let dx = ops::maxpool2_backward(x.dims(), &arg, &r);
    let nx = numeric_input_grad(&x, &|y| dot(&ops::maxpool2(y).0, &r));

    let s = random_tensor(&mut rng, 2, 2, 2);
    let ru = random_tensor(&mut rng, 2, 4, 4);
    let ds = ops::upsample2_backward(&ru);
    let ns = numeric_input_grad(&s, &|y| dot(&ops::upsample2(y), &ru));
    GradCheck {
        name: "maxpool_upsample",
        rel_err: worst(&[(&dx.data, &nx), (&ds.data, &ns)]),
    }
}

pub fn check_attention_gate(seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamSet::default();
    let gate = AttentionGate::new(&mut p, &mut rng, "g", 2, 3, 2);
    jitter(&mut p, &mut rng, 0.2);
    let skip = random_tensor(&mut rng, 2, 4, 4);
    let query = random_tensor(&mut rng, 3, 4, 4);
    let r = random_tensor(&mut rng, 2, 4, 4);
    let f = |q: &ParamSet, s: &Tensor, qy: &Tensor| dot(&gate.forward(q, s, qy).out, &r);
    let mut g = p.zeros_like();
    let cache = gate.forward(&p, &skip, &query);
    let (dskip, dquery) = gate.backward(&p, &cache, &r, &mut g);
    let np = numeric_param_grad(&p, &|q| f(q, &skip, &query));
    let ns = numeric_input_grad(&skip, &|y| f(&p, y, &query));
    let nq = numeric_input_grad(&query, &|y| f(&p, &skip, y));
    GradCheck {
        name: "attention_gate",
        rel_err: worst(&[(&flat(&g), &np), (&dskip.data, &ns), (&dquery.data, &nq)]),
    }
}

pub fn check_channel_attention(seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamSet::default();
    let ca = ChannelAttention::new(&mut p, &mut rng, "ca", 2, 4);
    jitter(&mut p, &mut rng, 0.2);
    let x = unit_tensor(&mut rng, 2, 4, 4);
    let r = random_tensor(&mut rng, 2, 4, 4);
    let mut g = p.zeros_like();
    let cache = ca.forward(&p, &x);
    let dx = ca.backward(&p, &cache, &r, &mut g);
    let np = numeric_param_grad(&p, &|q| dot(&ca.forward(q, &x).out, &r));
    let nx = numeric_input_grad(&x, &|y| dot(&ca.forward(&p, y).out, &r));
    GradCheck {
        name: "channel_attention",
        rel_err: worst(&[(&flat(&g), &np), (&dx.data, &nx)]),
    }
}

pub fn check_convgru(seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamSet::default();
    let gru = ConvGru::new(&mut p, &mut rng, "gru", 2, 2);
    jitter(&mut p, &mut rng, 0.2);
    let x = random_tensor(&mut rng, 2, 4, 4);
    let h = random_tensor(&mut rng, 2, 4, 4);
    let r = random_tensor(&mut rng, 2, 4, 4);
    let f = |q: &ParamSet, xi: &Tensor, hi: &Tensor| dot(&gru.forward(q, xi, hi).out, &r);
    let mut g = p.zeros_like();
    let cache = gru.forward(&p, &x, &h);
    let (dx, dh) = gru.backward(&p, &cache, &r, &mut g);
    let np = numeric_param_grad(&p, &|q| f(q, &x, &h));
    let nx = numeric_input_grad(&x, &|y| f(&p, y, &h));
    let nh = numeric_input_grad(&h, &|y| f(&p, &x, y));
    GradCheck {
        name: "convgru",
        rel_err: worst(&[(&flat(&g), &np), (&dx.data, &nx), (&dh.data, &nh)]),
    }
}

pub fn check_dice_loss(seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pred = unit_tensor(&mut rng, 1, 4, 4);
    let label = unit_tensor(&mut rng, 1, 4, 4);
    let (_, ga) = w_dice_loss(&pred, &label, None).unwrap();
    let nd = numeric_input_grad(&pred, &|y| w_dice_loss(y, &label, None).unwrap().0);
    GradCheck {
        name: "w_dice_loss",
        rel_err: rel_err(&ga.data, &nd),
    }
}

pub fn check_ce_loss(seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pred = unit_tensor(&mut rng, 1, 4, 4);
    let label = unit_tensor(&mut rng, 1, 4, 4);
    let (_, ga) = w_ce_loss(&pred, &label, 5.0, None).unwrap();
    let nc = numeric_input_grad(&pred, &|y| w_ce_loss(y, &label, 5.0, None).unwrap().0);
    GradCheck {
        name: "w_ce_loss",
        rel_err: rel_err(&ga.data, &nc),
    }
}

/// Summed w-Dice loss of a window with the recurrent state carried, and
/// optionally its gradient by backpropagation through time.
fn sequence_loss(net: &UNet, inputs: &[Tensor], labels: &[Tensor], grads: Option<&mut ParamSet>) -> f64 {
    let mut state = net.initial_state(inputs[0].h, inputs[0].w);
    let mut caches = Vec::new();
    let mut total = 0.0;
    for (x, y) in inputs.iter().zip(labels) {
        let (pred, next, cache) = net.forward(x, &state).unwrap();
        let (l, d) = w_dice_loss(&pred, y, None).unwrap();
        total += l;
        caches.push((cache, d));
        state = next;
    }
    if let Some(g) = grads {
        let mut dh = None;
        for (c, d) in caches.iter().rev() {
            dh = net.backward(c, d, dh.as_ref(), g);
        }
    }
    total
}

/// The whole network over a three-frame window, through time.
pub fn check_network_through_time(seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = UNetSpec {
        in_channels: 2,
        base_channels: 2,
        depth: 2,
        ..UNetSpec::default()
    };
    let mut net = UNet::new(spec, seed).unwrap();
    jitter(&mut net.params, &mut rng, 0.1);
    let inputs: Vec<Tensor> = (0..3).map(|_| unit_tensor(&mut rng, 2, 8, 8)).collect();
    let labels: Vec<Tensor> = (0..3).map(|_| unit_tensor(&mut rng, 1, 8, 8)).collect();
    let mut g = net.params.zeros_like();
    sequence_loss(&net, &inputs, &labels, Some(&mut g));
    let numeric = numeric_param_grad(&net.params, &|q| {
        let n = UNet::with_params(net.spec, q.clone()).unwrap();
        sequence_loss(&n, &inputs, &labels, None)
    });
    GradCheck {
        name: "unet_through_time",
        rel_err: rel_err(&flat(&g), &numeric),
    }
}

/// Every layer and both losses, each under its own seed derived from `seed`.
pub fn run_all(seed: u64) -> Vec<GradCheck> {
    let checks: [fn(u64) -> GradCheck; 10] = [
        check_conv,
        check_norm,
        check_conv_block,
        check_pool_upsample,
        check_attention_gate,
        check_channel_attention,
        check_convgru,
        check_dice_loss,
        check_ce_loss,
        check_network_through_time,
    ];
    checks
        .iter()
        .enumerate()
        .map(|(i, f)| f(seed.wrapping_add(i as u64)))
        .collect()
}
