use serde::{Deserialize, Serialize};

use super::loss::{loss_and_grad, LossKind};
use super::tensor::Tensor;
use super::unet::{UNet, UNetSpec};
use crate::error::{Error, Result};

/// When the recurrent state is zeroed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ResetPolicy {
    /// Every `k` frames, counted over the whole sequence.
    FixedLength { k: usize },
    /// At every sweep boundary of the scanner motion.
    #[default]
    AlignWithScan,
}

impl ResetPolicy {
    pub fn validate(&self) -> Result<()> {
        match self {
            ResetPolicy::FixedLength { k: 0 } => Err(Error::InvalidParam("fixed-length reset needs k >= 1".into())),
            _ => Ok(()),
        }
    }

    /// Splits frame positions `0..sweep_ids.len()` into state windows.
    pub fn windows(&self, sweep_ids: &[usize]) -> Vec<std::ops::Range<usize>> {
        let n = sweep_ids.len();
        match *self {
            ResetPolicy::FixedLength { k } => (0..n).step_by(k.max(1)).map(|s| s..(s + k).min(n)).collect(),
            ResetPolicy::AlignWithScan => {
                let mut out = Vec::new();
                let mut start = 0;
                for i in 1..=n {
                    if i == n || sweep_ids[i] != sweep_ids[i - 1] {
                        out.push(start..i);
                        start = i;
                    }
                }
                out
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub learning_rate: f64,
    pub epochs: usize,
    pub reset_policy: ResetPolicy,
    pub seed: u64,
    pub ce_weight_lambda: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::WDice,
            learning_rate: 0.05,
            epochs: 300,
            reset_policy: ResetPolicy::AlignWithScan,
            seed: 1,
            ce_weight_lambda: 10.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() || self.epochs == 0 || !(self.ce_weight_lambda >= 0.0) {
            return Err(Error::InvalidParam(format!("training config {self:?}")));
        }
        self.reset_policy.validate()
    }
}

/// One training frame: network input, target and the sweep it belongs to.
#[derive(Clone, Debug)]
pub struct Sample {
    pub input: Tensor,
    pub label: Tensor,
    pub sweep_id: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Mean per-frame loss at the start of every epoch.
    pub loss_trace: Vec<f64>,
    /// Mean loss after the final update.
    pub final_loss: f64,
}

fn effective_windows(net: &UNet, policy: &ResetPolicy, samples: &[Sample]) -> Vec<std::ops::Range<usize>> {
    if net.spec.use_convgru {
        policy.windows(&samples.iter().map(|s| s.sweep_id).collect::<Vec<_>>())
    } else {
        (0..samples.len()).map(|i| i..i + 1).collect()
    }
}

fn check_samples(spec: &UNetSpec, samples: &[Sample]) -> Result<()> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidParam("empty training set".into()))?;
    let (h, w) = (first.input.h, first.input.w);
    spec.check_input(h, w)?;
    for s in samples {
        if s.input.dims() != (spec.in_channels, h, w) || s.label.dims() != (1, h, w) {
            return Err(Error::Dimension(format!(
                "sample input {:?} / label {:?}, expected {:?}",
                s.input.dims(),
                s.label.dims(),
                (spec.in_channels, h, w)
            )));
        }
    }
    Ok(())
}

/// Mean loss over `samples` and, when `grads` is given, the summed gradient.
fn pass(net: &UNet, cfg: &TrainConfig, samples: &[Sample], grads: Option<&mut super::params::ParamSet>) -> Result<f64> {
    let (h, w) = (samples[0].input.h, samples[0].input.w);
    let mut total = 0.0;
    let mut grads = grads;
    for window in effective_windows(net, &cfg.reset_policy, samples) {
        let mut state = net.initial_state(h, w);
        let mut caches = Vec::with_capacity(window.len());
        for s in &samples[window] {
            let (pred, next, cache) = net.forward(&s.input, &state)?;
            let (loss, dpred) = loss_and_grad(cfg.loss, &pred, &s.label, cfg.ce_weight_lambda, None)?;
            total += loss;
            state = next;
            if grads.is_some() {
                caches.push((cache, dpred));
            }
        }
        if let Some(g) = grads.as_deref_mut() {
            let mut dh: Option<Tensor> = None;
            for (cache, dpred) in caches.iter().rev() {
                dh = net.backward(cache, dpred, dh.as_ref(), g);
            }
        }
    }
    Ok(total / samples.len() as f64)
}

/// Full-batch gradient descent with truncated backpropagation inside each
/// reset window.
pub fn train(net: &mut UNet, cfg: &TrainConfig, samples: &[Sample]) -> Result<TrainReport> {
    cfg.validate()?;
    check_samples(&net.spec, samples)?;
    let mut grads = net.params.zeros_like();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let scale = -cfg.learning_rate / samples.len() as f64;
    for epoch in 0..cfg.epochs {
        grads.fill_zero();
        let loss = pass(net, cfg, samples, Some(&mut grads))?;
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::Training { epoch });
        }
        trace.push(loss);
        net.params.add_scaled(&grads, scale);
    }
    let final_loss = pass(net, cfg, samples, None)?;
    if !final_loss.is_finite() || !net.params.is_finite() {
        return Err(Error::Training { epoch: cfg.epochs });
    }
    Ok(TrainReport {
        loss_trace: trace,
        final_loss,
    })
}

/// Runs the network over a sequence, resetting state per `policy`.
pub fn predict_sequence(net: &UNet, policy: &ResetPolicy, inputs: &[Tensor], sweep_ids: &[usize]) -> Result<Vec<Tensor>> {
    if inputs.len() != sweep_ids.len() {
        return Err(Error::Alignment(format!("{} inputs, {} sweep ids", inputs.len(), sweep_ids.len())));
    }
    policy.validate()?;
    let mut out = Vec::with_capacity(inputs.len());
    let Some(first) = inputs.first() else {
        return Ok(out);
    };
    let windows = if net.spec.use_convgru {
        policy.windows(sweep_ids)
    } else {
        (0..inputs.len()).map(|i| i..i + 1).collect()
    };
    for window in windows {
        let mut state = net.initial_state(first.h, first.w);
        for x in &inputs[window] {
            let (pred, next, _) = net.forward(x, &state)?;
            out.push(pred);
            state = next;
        }
    }
    Ok(out)
}
