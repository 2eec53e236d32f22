//! Binary PGM overlays.
//!
//! Fixed mapping: the B-mode value, clamped to [0, 1], takes grey levels
//! 0..=180; pixels with label >= 0.5 add 40 and pixels with prediction >= 0.5
//! add 35, saturating at 255. Overlap of label and prediction is therefore
//! the brightest band.

use spinesurf::{Error, Grid};

pub const BMODE_MAX: f64 = 180.0;
pub const LABEL_BAND: u16 = 40;
pub const PRED_BAND: u16 = 35;
pub const BAND_THRESHOLD: f64 = 0.5;

pub fn overlay_pixel(bmode: f64, label: Option<f64>, pred: Option<f64>) -> u8 {
    let base = (bmode.clamp(0.0, 1.0) * BMODE_MAX).round() as u16;
    let band = |v: Option<f64>, add: u16| if v.is_some_and(|v| v >= BAND_THRESHOLD) { add } else { 0 };
    (base + band(label, LABEL_BAND) + band(pred, PRED_BAND)).min(255) as u8
}

/// P5 image with one grey pixel per grid cell, row 0 at the top.
pub fn render_overlay(bmode: &Grid, label: Option<&Grid>, pred: Option<&Grid>) -> Result<Vec<u8>, Error> {
    for g in [label, pred].into_iter().flatten() {
        if !g.same_shape(bmode) {
            return Err(Error::Dimension(format!(
                "overlay {}x{} vs frame {}x{}",
                g.rows(),
                g.cols(),
                bmode.rows(),
                bmode.cols()
            )));
        }
    }
    let mut out = format!("P5\n{} {}\n255\n", bmode.cols(), bmode.rows()).into_bytes();
    for r in 0..bmode.rows() {
        for c in 0..bmode.cols() {
            out.push(overlay_pixel(
                bmode.get(r, c),
                label.map(|g| g.get(r, c)),
                pred.map(|g| g.get(r, c)),
            ));
        }
    }
    Ok(out)
}
