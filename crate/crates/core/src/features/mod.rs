//! Aggregated bone-surface feature maps.
//!
//! A B-mode frame is resampled to its polar lattice, where a phase-symmetry
//! ridge detector and a confidence-map shadow boundary are computed. Their
//! element-wise product is scan-converted back to the frame's Cartesian
//! lattice.

mod confidence;
mod fft;
mod phase;
mod shadow;

pub use confidence::{
    confidence_map, confidence_map_dense, confidence_map_grid, ConfidenceParams, ConfidenceSolve,
    LaplacianSystem, DENSE_MAX_SIDE,
};
pub use phase::{log_gabor_bank, phase_symmetry, phase_symmetry_grid, LogGaborBank, LogGaborParams};
pub use shadow::{blur, gaussian_taps, shadow_boundary, sobel_magnitude};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cartesian_to_polar, polar_to_cartesian_on, CartesianImage, ImageGeometry, PolarImage};
use crate::grid::Grid;

/// Per-pixel scalar map with values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub data: Grid,
}

impl FeatureMap {
    /// Wraps a grid, clamping values that stray outside [0, 1] by rounding.
    pub fn new(data: Grid) -> Result<Self> {
        const SLACK: f64 = 1e-9;
        if data
            .data()
            .iter()
            .any(|v| !v.is_finite() || *v < -SLACK || *v > 1.0 + SLACK)
        {
            return Err(Error::InvalidParam("feature values must lie in [0, 1]".into()));
        }
        Ok(FeatureMap {
            data: data.map(|v| v.clamp(0.0, 1.0)),
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        FeatureMap {
            data: Grid::zeros(rows, cols),
        }
    }

    pub fn rows(&self) -> usize {
        self.data.rows()
    }

    pub fn cols(&self) -> usize {
        self.data.cols()
    }
}

/// Element-wise product of the phase-symmetry and shadow maps.
pub fn aggregate(ps: &FeatureMap, shadow: &FeatureMap) -> Result<FeatureMap> {
    if !ps.data.same_shape(&shadow.data) {
        return Err(Error::Dimension(format!(
            "{}x{} vs {}x{}",
            ps.rows(),
            ps.cols(),
            shadow.rows(),
            shadow.cols()
        )));
    }
    let data: Vec<f64> = ps
        .data
        .data()
        .iter()
        .zip(shadow.data.data())
        .map(|(a, b)| a * b)
        .collect();
    FeatureMap::new(Grid::from_vec(ps.rows(), ps.cols(), data)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureParams {
    pub log_gabor: LogGaborParams,
    pub confidence: ConfidenceParams,
    pub sobel_threshold: f64,
    pub blur_kernel_px: usize,
}

impl Default for FeatureParams {
    fn default() -> Self {
        FeatureParams {
            log_gabor: LogGaborParams::default(),
            confidence: ConfidenceParams::default(),
            sobel_threshold: 0.3,
            blur_kernel_px: 6,
        }
    }
}

impl FeatureParams {
    pub fn validate(&self) -> Result<()> {
        self.log_gabor.validate()?;
        self.confidence.validate()?;
        if !(self.sobel_threshold > 0.0 && self.sobel_threshold < 1.0) || self.blur_kernel_px < 1 {
            return Err(Error::InvalidParam(format!(
                "sobel threshold {}, blur kernel {}",
                self.sobel_threshold, self.blur_kernel_px
            )));
        }
        Ok(())
    }
}

/// Intermediate products of one pipeline run, all on the polar lattice
/// except `feature`.
#[derive(Clone, Debug)]
pub struct FeatureOutput {
    pub feature: CartesianImage,
    pub polar: PolarImage,
    pub phase: FeatureMap,
    pub confidence: FeatureMap,
    pub shadow: FeatureMap,
    pub aggregated: FeatureMap,
    pub solver_iterations: usize,
    pub solver_residual: f64,
}

/// The feature chain on a polar frame, without scan conversion.
pub fn polar_feature_map(polar: &PolarImage, params: &FeatureParams) -> Result<FeatureMap> {
    Ok(polar_feature_solve(polar, params)?.0)
}

/// [`polar_feature_map`] plus the confidence solve it was built from.
pub fn polar_feature_solve(polar: &PolarImage, params: &FeatureParams) -> Result<(FeatureMap, ConfidenceSolve)> {
    params.validate()?;
    let phase = phase_symmetry(polar, &params.log_gabor)?;
    let solve = confidence_map_grid(&polar.data, &params.confidence)?;
    let shadow = shadow_boundary(&solve.map, params.sobel_threshold, params.blur_kernel_px)?;
    Ok((aggregate(&phase, &shadow)?, solve))
}

/// Runs the full feature chain on a Cartesian B-mode frame. The returned map
/// lives on the input lattice and shares its mask.
pub fn feature_pipeline(
    bmode: &CartesianImage,
    geo: &ImageGeometry,
    params: &FeatureParams,
) -> Result<FeatureOutput> {
    params.validate()?;
    let polar = cartesian_to_polar(bmode, geo)?;
    let phase = phase_symmetry(&polar, &params.log_gabor)?;
    let solve = confidence_map_grid(&polar.data, &params.confidence)?;
    let shadow = shadow_boundary(&solve.map, params.sobel_threshold, params.blur_kernel_px)?;
    let aggregated = aggregate(&phase, &shadow)?;
    let resampled = polar_to_cartesian_on(
        &PolarImage::new(*geo, aggregated.data.clone())?,
        &bmode.layout,
    )?;
    let mut data = resampled.data;
    // Pixels the input keeps but whose centers sit just outside the sector
    // take the nearest in-sector value via clamped interpolation.
    for row in 0..bmode.height_px() {
        for col in 0..bmode.width_px() {
            let idx = row * bmode.width_px() + col;
            if bmode.mask[idx] && !resampled.mask[idx] {
                let [x, z] = bmode.layout.pixel_center(col, row);
                let (fk, fs) = geo.polar_coords(x, z);
                let k = fk.round().clamp(0.0, (geo.n_rays - 1) as f64) as usize;
                let s = fs.round().clamp(0.0, (geo.n_samples - 1) as f64) as usize;
                data.set(row, col, aggregated.data.get(s, k));
            }
        }
    }
    let feature = CartesianImage::new(bmode.layout, data, bmode.mask.clone())?;
    Ok(FeatureOutput {
        feature,
        polar,
        phase,
        confidence: solve.map,
        shadow,
        aggregated,
        solver_iterations: solve.iterations,
        solver_residual: solve.residual,
    })
}
