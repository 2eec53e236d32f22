//! Log-Gabor quadrature filtering and the phase-symmetry ridge measure.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::fft::{bin_frequency, fft2, reflect};
use super::FeatureMap;
use crate::error::{Error, Result};
use crate::geometry::PolarImage;
use crate::grid::Grid;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LogGaborParams {
    pub n_scales: usize,
    pub n_orientations: usize,
    pub min_wavelength_px: f64,
    pub scale_mult: f64,
    /// Ratio of the radial Gaussian's width to the center frequency.
    pub sigma_onf: f64,
    /// Orientation spacing divided by the angular standard deviation.
    pub d_theta_sigma: f64,
    /// Noise threshold in units of the estimated mean noise amplitude.
    pub noise_t: f64,
    /// Regularizer of the normalizing energy, relative to its image mean.
    pub epsilon: f64,
}

impl Default for LogGaborParams {
    fn default() -> Self {
        LogGaborParams {
            n_scales: 3,
            n_orientations: 6,
            min_wavelength_px: 6.0,
            scale_mult: 2.1,
            sigma_onf: 0.55,
            d_theta_sigma: 1.2,
            noise_t: 2.0,
            epsilon: 1e-4,
        }
    }
}

impl LogGaborParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.n_scales >= 1
            && self.n_orientations >= 1
            && self.min_wavelength_px >= 2.0
            && self.scale_mult > 0.0
            && self.sigma_onf > 0.0
            && self.sigma_onf < 1.0
            && self.d_theta_sigma > 0.0
            && self.noise_t >= 0.0
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParam(format!("log-Gabor parameters {self:?}")))
        }
    }

    fn center_frequency(&self, scale: usize) -> f64 {
        1.0 / (self.min_wavelength_px * self.scale_mult.powi(scale as i32))
    }

    fn orientation(&self, o: usize) -> f64 {
        o as f64 * PI / self.n_orientations as f64
    }
}

/// Frequency-domain filter bank, indexed `[scale][orientation]`. Each filter is
/// a real nonnegative transfer function on the unshifted `rows x cols` DFT
/// lattice (DC at `(0, 0)`).
#[derive(Clone, Debug)]
pub struct LogGaborBank {
    pub rows: usize,
    pub cols: usize,
    pub filters: Vec<Vec<Grid>>,
}

pub fn log_gabor_bank(rows: usize, cols: usize, p: &LogGaborParams) -> Result<LogGaborBank> {
    p.validate()?;
    if rows < 4 || cols < 4 {
        return Err(Error::Dimension(format!("{rows}x{cols} filter lattice")));
    }
    let log_sigma_sq = 2.0 * p.sigma_onf.ln().powi(2);
    let theta_sigma = PI / p.n_orientations as f64 / p.d_theta_sigma;
    let ang_denom = 2.0 * theta_sigma * theta_sigma;

    let mut radius = Grid::zeros(rows, cols);
    let mut angle = Grid::zeros(rows, cols);
    for r in 0..rows {
        let fy = bin_frequency(r, rows);
        for c in 0..cols {
            let fx = bin_frequency(c, cols);
            radius.set(r, c, fx.hypot(fy));
            angle.set(r, c, fy.atan2(fx));
        }
    }

    let mut filters = Vec::with_capacity(p.n_scales);
    for s in 0..p.n_scales {
        let f0 = p.center_frequency(s);
        let mut per_orientation = Vec::with_capacity(p.n_orientations);
        for o in 0..p.n_orientations {
            let theta0 = p.orientation(o);
            let filter = Grid::from_fn(rows, cols, |r, c| {
                let f = radius.get(r, c);
                if f == 0.0 {
                    return 0.0;
                }
                let radial = (-(f / f0).ln().powi(2) / log_sigma_sq).exp();
                let d = angle.get(r, c) - theta0;
                let dtheta = d.sin().atan2(d.cos()).abs();
                radial * (-dtheta * dtheta / ang_denom).exp()
            });
            per_orientation.push(filter);
        }
        filters.push(per_orientation);
    }
    Ok(LogGaborBank {
        rows,
        cols,
        filters,
    })
}

/// Phase symmetry of a polar frame (rows are depth samples).
pub fn phase_symmetry(img: &PolarImage, p: &LogGaborParams) -> Result<FeatureMap> {
    phase_symmetry_grid(&img.data, p)
}

/// Phase symmetry on an arbitrary grid.
///
/// For each scale/orientation the one-sided log-Gabor response gives an even
/// (real) and odd (imaginary) part. The measure sums `|even| - |odd| - T`
/// clipped at zero and normalizes by the summed amplitude. The image is
/// mirror-padded to a power of two before filtering.
pub fn phase_symmetry_grid(img: &Grid, p: &LogGaborParams) -> Result<FeatureMap> {
    p.validate()?;
    let (rows, cols) = (img.rows(), img.cols());
    if rows < 2 || cols < 2 {
        return Err(Error::Dimension(format!("{rows}x{cols} image")));
    }
    if !img.is_finite() {
        return Err(Error::InvalidParam("non-finite image".into()));
    }
    let prow = (2 * rows).next_power_of_two().max(4);
    let pcol = (2 * cols).next_power_of_two().max(4);
    let off_r = (prow - rows) / 2;
    let off_c = (pcol - cols) / 2;

    let mut spectrum = vec![Complex64::new(0.0, 0.0); prow * pcol];
    for r in 0..prow {
        let sr = reflect(r as isize - off_r as isize, rows);
        for c in 0..pcol {
            let sc = reflect(c as isize - off_c as isize, cols);
            spectrum[r * pcol + c] = Complex64::new(img.get(sr, sc), 0.0);
        }
    }
    fft2(&mut spectrum, prow, pcol, false);

    let bank = log_gabor_bank(prow, pcol, p)?;
    let n = rows * cols;
    let mut numerator = vec![0.0; n];
    let mut energy = vec![0.0; n];
    let mut response = vec![Complex64::new(0.0, 0.0); prow * pcol];
    let mut even = vec![0.0; n];
    let mut odd = vec![0.0; n];
    let rayleigh_mean = (PI / 2.0).sqrt();
    for o in 0..p.n_orientations {
        let mut tau = 0.0;
        for s in 0..p.n_scales {
            let filter = bank.filters[s][o].data();
            for ((out, spec), h) in response.iter_mut().zip(&spectrum).zip(filter) {
                *out = spec * h;
            }
            fft2(&mut response, prow, pcol, true);
            for r in 0..rows {
                for c in 0..cols {
                    let v = response[(r + off_r) * pcol + c + off_c];
                    even[r * cols + c] = v.re;
                    odd[r * cols + c] = v.im;
                }
            }
            if s == 0 {
                // Rayleigh-mode estimate from the median amplitude of the finest scale.
                let mut amps: Vec<f64> = even.iter().zip(&odd).map(|(e, q)| e.hypot(*q)).collect();
                tau = median(&mut amps) / (4.0f64.ln()).sqrt();
            }
            let threshold = p.noise_t * tau * rayleigh_mean / p.scale_mult.powi(s as i32);
            for i in 0..n {
                numerator[i] += (even[i].abs() - odd[i].abs() - threshold).max(0.0);
                energy[i] += even[i].hypot(odd[i]);
            }
        }
    }
    // Both terms scale with the image, so the measure is contrast invariant.
    let mean_energy = energy.iter().sum::<f64>() / n as f64;
    let mean_abs = img.data().iter().map(|v| v.abs()).sum::<f64>() / n as f64;
    let eps = p.epsilon * mean_energy + 1e-6 * mean_abs + f64::MIN_POSITIVE;
    let data: Vec<f64> = numerator
        .iter()
        .zip(&energy)
        .map(|(num, e)| (num / (e + eps)).clamp(0.0, 1.0))
        .collect();
    FeatureMap::new(Grid::from_vec(rows, cols, data)?)
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mid = values.len() / 2;
    let (_, m, _) = values.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    *m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> LogGaborParams {
        LogGaborParams {
            noise_t: 0.0,
            ..LogGaborParams::default()
        }
    }

    #[test]
    fn bank_has_no_dc_and_is_bounded() {
        let bank = log_gabor_bank(32, 48, &LogGaborParams::default()).unwrap();
        assert_eq!(bank.filters.len(), 3);
        for scale in &bank.filters {
            assert_eq!(scale.len(), 6);
            for f in scale {
                assert_eq!(f.get(0, 0), 0.0);
                assert!(f.min() >= 0.0 && f.max() <= 1.0);
            }
        }
    }

    #[test]
    fn single_filter_peaks_at_center_frequency() {
        let p = LogGaborParams {
            n_scales: 1,
            n_orientations: 1,
            ..LogGaborParams::default()
        };
        let bank = log_gabor_bank(48, 48, &p).unwrap();
        let f = &bank.filters[0][0];
        // f0 = 1/6 cycles/px lands on column bin 8 of 48, orientation 0
        assert!((f.get(0, 8) - 1.0).abs() < 1e-6);
        assert!((f.max() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn constant_image_has_no_symmetry() {
        let img = Grid::filled(64, 64, 0.7);
        let ps = phase_symmetry_grid(&img, &quiet()).unwrap();
        assert!(ps.data.max() < 1e-6, "{}", ps.data.max());
    }

    #[test]
    fn horizontal_ridge_is_located() {
        let row = 27.0;
        let img = Grid::from_fn(64, 64, |r, _| (-(r as f64 - row).powi(2) / (2.0 * 1.5 * 1.5)).exp());
        let ps = phase_symmetry_grid(&img, &LogGaborParams::default()).unwrap();
        for c in 0..64 {
            let best = (0..64)
                .max_by(|&a, &b| ps.data.get(a, c).total_cmp(&ps.data.get(b, c)))
                .unwrap();
            assert!((best as f64 - row).abs() <= 1.0, "column {c}: {best}");
        }
    }

    #[test]
    fn dimension_and_param_errors() {
        assert!(log_gabor_bank(3, 8, &LogGaborParams::default()).is_err());
        let bad = LogGaborParams {
            sigma_onf: 1.5,
            ..LogGaborParams::default()
        };
        assert!(phase_symmetry_grid(&Grid::zeros(8, 8), &bad).is_err());
    }
}
