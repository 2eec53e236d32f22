use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const DICE_EPS: f64 = 1e-6;
pub const CE_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    WDice,
    WCe,
}

impl LossKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LossKind::WDice => "w_dice",
            LossKind::WCe => "w_ce",
        }
    }
}

fn check(pred: &Tensor, label: &Tensor, mask: Option<&[bool]>) -> Result<()> {
    if !pred.same_dims(label) {
        return Err(Error::Dimension(format!("prediction {:?} vs label {:?}", pred.dims(), label.dims())));
    }
    if mask.is_some_and(|m| m.len() != pred.len()) {
        return Err(Error::Dimension("mask length differs from prediction".into()));
    }
    Ok(())
}

#[inline]
fn inside(mask: Option<&[bool]>, i: usize) -> bool {
    mask.is_none_or(|m| m[i])
}

/// Soft Dice with squared denominator:
/// `1 - (2 sum pg + eps) / (sum p^2 + sum g^2 + eps)`, and its gradient.
/// Pixels outside `mask` are ignored.
pub fn w_dice_loss(pred: &Tensor, label: &Tensor, mask: Option<&[bool]>) -> Result<(f64, Tensor)> {
    check(pred, label, mask)?;
    let (mut pg, mut pp, mut gg) = (0.0, 0.0, 0.0);
    for (i, (p, g)) in pred.data.iter().zip(&label.data).enumerate() {
        if inside(mask, i) {
            pg += p * g;
            pp += p * p;
            gg += g * g;
        }
    }
    let num = 2.0 * pg + DICE_EPS;
    let den = pp + gg + DICE_EPS;
    let loss = 1.0 - num / den;
    let mut grad = Tensor::zeros(pred.c, pred.h, pred.w);
    for (i, d) in grad.data.iter_mut().enumerate() {
        if inside(mask, i) {
            let (p, g) = (pred.data[i], label.data[i]);
            *d = -(2.0 * g * den - num * 2.0 * p) / (den * den);
        }
    }
    Ok((loss, grad))
}

/// Pixel-weighted binary cross-entropy with weights `1 + lambda * g`.
/// Predictions are clamped to `[1e-7, 1 - 1e-7]`; the gradient is zero where
/// the clamp is active.
pub fn w_ce_loss(pred: &Tensor, label: &Tensor, lambda: f64, mask: Option<&[bool]>) -> Result<(f64, Tensor)> {
    check(pred, label, mask)?;
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParam(format!("cross-entropy weight {lambda}")));
    }
    let mut wsum = 0.0;
    let mut total = 0.0;
    let mut grad = Tensor::zeros(pred.c, pred.h, pred.w);
    for i in 0..pred.len() {
        if !inside(mask, i) {
            continue;
        }
        let g = label.data[i];
        let raw = pred.data[i];
        let p = raw.clamp(CE_CLAMP, 1.0 - CE_CLAMP);
        let w = 1.0 + lambda * g;
        wsum += w;
        total += w * (-g * p.ln() - (1.0 - g) * (1.0 - p).ln());
        if raw == p {
            grad.data[i] = w * (-g / p + (1.0 - g) / (1.0 - p));
        }
    }
    if wsum == 0.0 {
        return Ok((0.0, grad));
    }
    grad.data.iter_mut().for_each(|d| *d /= wsum);
    Ok((total / wsum, grad))
}

pub fn loss_and_grad(kind: LossKind, pred: &Tensor, label: &Tensor, lambda: f64, mask: Option<&[bool]>) -> Result<(f64, Tensor)> {
    match kind {
        LossKind::WDice => w_dice_loss(pred, label, mask),
        LossKind::WCe => w_ce_loss(pred, label, lambda, mask),
    }
}
