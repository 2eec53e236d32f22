use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{AttentionGate, BlockCache, ChannelAttention, ChannelCache, Conv, ConvBlock, ConvGru, GateCache, GruCache};
use super::ops;
use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UNetSpec {
    pub in_channels: usize,
    pub base_channels: usize,
    pub depth: usize,
    pub use_convgru: bool,
    pub use_spatial_attention: bool,
    pub use_channel_attention: bool,
}

impl Default for UNetSpec {
    fn default() -> Self {
        UNetSpec {
            in_channels: 2,
            base_channels: 8,
            depth: 3,
            use_convgru: true,
            use_spatial_attention: true,
            use_channel_attention: true,
        }
    }
}

impl UNetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.base_channels == 0 || self.depth == 0 || self.depth > 8 {
            return Err(Error::InvalidParam(format!("network spec {self:?}")));
        }
        Ok(())
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let m = 1 << self.depth;
        if h == 0 || w == 0 || !h.is_multiple_of(m) || !w.is_multiple_of(m) {
            return Err(Error::Shape(format!("{h}x{w} input is not divisible by 2^{}", self.depth)));
        }
        Ok(())
    }

    pub fn level_channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.level_channels(self.depth)
    }
}

/// Recurrent state carried between frames.
#[derive(Clone, Debug, PartialEq)]
pub struct GruState {
    pub hidden: Tensor,
}

impl GruState {
    pub fn zeros(spec: &UNetSpec, h: usize, w: usize) -> Self {
        GruState {
            hidden: Tensor::zeros(spec.bottleneck_channels(), h >> spec.depth, w >> spec.depth),
        }
    }
}

struct Decoder {
    gate: Option<AttentionGate>,
    block: ConvBlock,
}

pub struct UNet {
    pub spec: UNetSpec,
    pub params: ParamSet,
    channel_attention: Option<ChannelAttention>,
    encoder: Vec<ConvBlock>,
    bottleneck: ConvBlock,
    gru: Option<ConvGru>,
    decoder: Vec<Decoder>,
    head: Conv,
}

struct DecoderCache {
    up: Tensor,
    gate: Option<GateCache>,
    block: BlockCache,
}

/// Everything the backward pass of one frame needs.
pub struct FrameCache {
    channel: Option<ChannelCache>,
    encoder: Vec<BlockCache>,
    pool_args: Vec<((usize, usize, usize), Vec<usize>)>,
    bottleneck: BlockCache,
    gru: Option<GruCache>,
    decoder: Vec<DecoderCache>,
    head_in: Tensor,
    pub pred: Tensor,
}

impl FrameCache {
    /// Per-channel input scaling applied by channel attention, if present.
    pub fn channel_scales(&self) -> Option<&[f64]> {
        self.channel.as_ref().map(|c| c.scale.as_slice())
    }
}

/// Initial bias of the output layer; starts predictions near 0.12 so the
/// sparse surface labels do not begin saturated.
const HEAD_BIAS: f64 = -2.0;

impl UNet {
    pub fn new(spec: UNetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::default();
        let channel_attention = spec
            .use_channel_attention
            .then(|| ChannelAttention::new(&mut p, &mut rng, "channel_attention", spec.in_channels, 4));
        let mut encoder = Vec::with_capacity(spec.depth);
        let mut cin = spec.in_channels;
        for l in 0..spec.depth {
            let c = spec.level_channels(l);
            encoder.push(ConvBlock::new(&mut p, &mut rng, &format!("enc{l}"), cin, c));
            cin = c;
        }
        let cb = spec.bottleneck_channels();
        let bottleneck = ConvBlock::new(&mut p, &mut rng, "bottleneck", cin, cb);
        let gru = spec.use_convgru.then(|| ConvGru::new(&mut p, &mut rng, "convgru", cb, cb));
        let mut decoder = Vec::with_capacity(spec.depth);
        let mut cprev = cb;
        for l in (0..spec.depth).rev() {
            let cs = spec.level_channels(l);
            let gate = spec
                .use_spatial_attention
                .then(|| AttentionGate::new(&mut p, &mut rng, &format!("gate{l}"), cs, cprev, cs));
            let block = ConvBlock::new(&mut p, &mut rng, &format!("dec{l}"), cprev + cs, cs);
            decoder.push(Decoder { gate, block });
            cprev = cs;
        }
        let head = Conv::new(&mut p, &mut rng, "head", spec.base_channels, 1, 1);
        p.get_mut(head.bias)[0] = HEAD_BIAS;
        Ok(UNet {
            spec,
            params: p,
            channel_attention,
            encoder,
            bottleneck,
            gru,
            decoder,
            head,
        })
    }

    /// Rebuilds the layout for `spec` and installs saved parameter values.
    pub fn with_params(spec: UNetSpec, params: ParamSet) -> Result<Self> {
        let mut net = UNet::new(spec, 0)?;
        if params.entries.len() != net.params.entries.len()
            || params
                .entries
                .iter()
                .zip(&net.params.entries)
                .any(|(a, b)| a.name != b.name || a.shape != b.shape)
        {
            return Err(Error::Shape("parameter layout does not match the network spec".into()));
        }
        net.params = params;
        Ok(net)
    }

    pub fn initial_state(&self, h: usize, w: usize) -> GruState {
        GruState::zeros(&self.spec, h, w)
    }

    pub fn forward(&self, input: &Tensor, state: &GruState) -> Result<(Tensor, GruState, FrameCache)> {
        let spec = &self.spec;
        if input.c != spec.in_channels {
            return Err(Error::Dimension(format!("{} input channels, expected {}", input.c, spec.in_channels)));
        }
        spec.check_input(input.h, input.w)?;
        let p = &self.params;
        let channel = self.channel_attention.map(|ca| ca.forward(p, input));
        let mut x = channel.as_ref().map_or_else(|| input.clone(), |c| c.out.clone());
        let mut encoder = Vec::with_capacity(spec.depth);
        let mut pool_args = Vec::with_capacity(spec.depth);
        for block in &self.encoder {
            let cache = block.forward(p, &x);
            let (pooled, arg) = ops::maxpool2(&cache.out);
            pool_args.push((cache.out.dims(), arg));
            encoder.push(cache);
            x = pooled;
        }
        let bottleneck = self.bottleneck.forward(p, &x);
        let (mut deep, gru, next_state) = match &self.gru {
            Some(gru) => {
                let expected = (spec.bottleneck_channels(), input.h >> spec.depth, input.w >> spec.depth);
                if state.hidden.dims() != expected {
                    return Err(Error::Dimension(format!(
                        "recurrent state {:?}, expected {expected:?}",
                        state.hidden.dims()
                    )));
                }
                let cache = gru.forward(p, &bottleneck.out, &state.hidden);
                let out = cache.out.clone();
                (out.clone(), Some(cache), GruState { hidden: out })
            }
            None => (bottleneck.out.clone(), None, state.clone()),
        };
        let mut decoder = Vec::with_capacity(spec.depth);
        for (i, dec) in self.decoder.iter().enumerate() {
            let level = spec.depth - 1 - i;
            let skip = &encoder[level].out;
            let up = ops::upsample2(&deep);
            let gate = dec.gate.map(|g| g.forward(p, skip, &up));
            let gated = gate.as_ref().map_or(skip, |g| &g.out);
            let block = dec.block.forward(p, &Tensor::concat(&[&up, gated]));
            deep = block.out.clone();
            decoder.push(DecoderCache { up, gate, block });
        }
        let pred = ops::sigmoid(&self.head.forward(p, &deep));
        let cache = FrameCache {
            channel,
            encoder,
            pool_args,
            bottleneck,
            gru,
            decoder,
            head_in: deep,
            pred: pred.clone(),
        };
        Ok((pred, next_state, cache))
    }

    /// Accumulates parameter gradients for one frame. `dhidden_next` is the
    /// gradient reaching this frame's output state from later frames.
    /// Returns the gradient with respect to the incoming state.
    pub fn backward(&self, cache: &FrameCache, dpred: &Tensor, dhidden_next: Option<&Tensor>, grads: &mut ParamSet) -> Option<Tensor> {
        let p = &self.params;
        let dlogit = ops::sigmoid_backward(&cache.pred, dpred);
        let mut ddeep = self.head.backward(p, &cache.head_in, &dlogit, grads);
        let mut dskips: Vec<Option<Tensor>> = vec![None; self.spec.depth];
        for (i, (dec, c)) in self.decoder.iter().zip(&cache.decoder).enumerate().rev() {
            let level = self.spec.depth - 1 - i;
            let dcat = dec.block.backward(p, &c.block, &ddeep, grads);
            let cs = self.spec.level_channels(level);
            let mut parts = dcat.split(&[c.up.c, cs]);
            let dgated = parts.pop().unwrap();
            let mut dup = parts.pop().unwrap();
            let dskip = match (&dec.gate, &c.gate) {
                (Some(g), Some(gc)) => {
                    let (ds, dq) = g.backward(p, gc, &dgated, grads);
                    dup.add_assign(&dq);
                    ds
                }
                _ => dgated,
            };
            dskips[level] = Some(dskip);
            ddeep = ops::upsample2_backward(&dup);
        }
        let mut dstate = None;
        let dbottleneck = match (&self.gru, &cache.gru) {
            (Some(gru), Some(gc)) => {
                let mut dh = ddeep;
                if let Some(next) = dhidden_next {
                    dh.add_assign(next);
                }
                let (dx, dprev) = gru.backward(p, gc, &dh, grads);
                dstate = Some(dprev);
                dx
            }
            _ => ddeep,
        };
        let mut dx = self.bottleneck.backward(p, &cache.bottleneck, &dbottleneck, grads);
        for level in (0..self.spec.depth).rev() {
            let (dims, arg) = &cache.pool_args[level];
            let mut dout = ops::maxpool2_backward(*dims, arg, &dx);
            if let Some(ds) = &dskips[level] {
                dout.add_assign(ds);
            }
            dx = self.encoder[level].backward(p, &cache.encoder[level], &dout, grads);
        }
        if let (Some(ca), Some(cc)) = (&self.channel_attention, &cache.channel) {
            ca.backward(p, cc, &dx, grads);
        }
        dstate
    }

    /// Current channel-attention scales, evaluated on `input`.
    pub fn channel_scales(&self, input: &Tensor) -> Option<Vec<f64>> {
        self.channel_attention.map(|ca| ca.forward(&self.params, input).scale)
    }
}
