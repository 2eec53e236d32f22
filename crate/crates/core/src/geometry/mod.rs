//! Phased-array sector geometry, scan conversion and scanner kinematics.
//!
//! Frame coordinates: x is lateral, z is depth along the beam axis and y is
//! elevation (out of the image plane). The sector apex sits at the frame
//! origin and rays fan out in the x/z plane.

mod pose;
mod scan;

pub use pose::{
    pose_from_joints, FrameRecord, FrameSequence, Pose, ScanKinematics, SweepDirection,
};
pub use scan::{cartesian_to_polar, pixel_to_world, polar_to_cartesian, polar_to_cartesian_on};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Sector geometry of a phased-array frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImageGeometry {
    pub depth_min_m: f64,
    pub depth_max_m: f64,
    /// Full sector opening.
    pub fov_rad: f64,
    pub n_rays: usize,
    pub n_samples: usize,
}

impl Default for ImageGeometry {
    /// 64 x 64 sector, 10-50 mm deep, 1 rad wide.
    fn default() -> Self {
        ImageGeometry {
            depth_min_m: 0.01,
            depth_max_m: 0.05,
            fov_rad: 1.0,
            n_rays: 64,
            n_samples: 64,
        }
    }
}

impl ImageGeometry {
    pub fn new(
        depth_min_m: f64,
        depth_max_m: f64,
        fov_rad: f64,
        n_rays: usize,
        n_samples: usize,
    ) -> Result<Self> {
        let geo = ImageGeometry {
            depth_min_m,
            depth_max_m,
            fov_rad,
            n_rays,
            n_samples,
        };
        geo.validate()?;
        Ok(geo)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.depth_min_m.is_finite()
            && self.depth_max_m.is_finite()
            && self.fov_rad.is_finite();
        if !finite || self.depth_min_m < 0.0 || self.depth_min_m >= self.depth_max_m {
            return Err(Error::InvalidGeometry(format!(
                "depth range [{}, {}]",
                self.depth_min_m, self.depth_max_m
            )));
        }
        if !(self.fov_rad > 0.0 && self.fov_rad < std::f64::consts::PI) {
            return Err(Error::InvalidGeometry(format!("fov {} rad", self.fov_rad)));
        }
        if self.n_rays < 2 || self.n_samples < 2 {
            return Err(Error::InvalidGeometry(format!(
                "{} rays x {} samples",
                self.n_rays, self.n_samples
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn angle_step(&self) -> f64 {
        self.fov_rad / (self.n_rays - 1) as f64
    }

    #[inline]
    pub fn depth_step(&self) -> f64 {
        (self.depth_max_m - self.depth_min_m) / (self.n_samples - 1) as f64
    }

    /// Steering angle of ray `k`, measured from the beam axis.
    #[inline]
    pub fn ray_angle(&self, k: usize) -> f64 {
        -0.5 * self.fov_rad + k as f64 * self.angle_step()
    }

    #[inline]
    pub fn sample_depth(&self, s: usize) -> f64 {
        self.depth_min_m + s as f64 * self.depth_step()
    }

    /// In-plane (x, z) position of a polar sample.
    #[inline]
    pub fn sample_position(&self, ray: usize, sample: usize) -> [f64; 2] {
        let a = self.ray_angle(ray);
        let d = self.sample_depth(sample);
        [d * a.sin(), d * a.cos()]
    }

    /// Fractional (ray, sample) coordinates of an in-plane point.
    #[inline]
    pub fn polar_coords(&self, x: f64, z: f64) -> (f64, f64) {
        let r = x.hypot(z);
        let theta = x.atan2(z);
        (
            (theta + 0.5 * self.fov_rad) / self.angle_step(),
            (r - self.depth_min_m) / self.depth_step(),
        )
    }

    pub fn contains(&self, x: f64, z: f64) -> bool {
        const TOL: f64 = 1e-12;
        let r = x.hypot(z);
        let theta = x.atan2(z);
        r >= self.depth_min_m - TOL
            && r <= self.depth_max_m + TOL
            && theta.abs() <= 0.5 * self.fov_rad + TOL
    }

    /// Axis-aligned bounds of the sector: `(x_min, x_max, z_min, z_max)`.
    pub fn sector_bounds(&self) -> (f64, f64, f64, f64) {
        let half = 0.5 * self.fov_rad;
        let x_max = self.depth_max_m * half.sin();
        let z_min = self.depth_min_m * half.cos();
        (-x_max, x_max, z_min, self.depth_max_m)
    }
}

/// Pixel lattice of a Cartesian image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CartesianLayout {
    pub width_px: usize,
    pub height_px: usize,
    pub pixel_size_m: f64,
    /// (x, z) position of the center of pixel (0, 0).
    pub origin_m: [f64; 2],
}

impl CartesianLayout {
    /// Smallest lattice that bounds the sector plus a one pixel margin.
    pub fn fit(geo: &ImageGeometry, pixel_size_m: f64) -> Result<Self> {
        geo.validate()?;
        if !(pixel_size_m > 0.0) || !pixel_size_m.is_finite() {
            return Err(Error::InvalidGeometry(format!("pixel size {pixel_size_m}")));
        }
        let (x0, x1, z0, z1) = geo.sector_bounds();
        let width_px = ((x1 - x0) / pixel_size_m).ceil() as usize + 3;
        let height_px = ((z1 - z0) / pixel_size_m).ceil() as usize + 3;
        Ok(CartesianLayout {
            width_px,
            height_px,
            pixel_size_m,
            origin_m: [x0 - pixel_size_m, z0 - pixel_size_m],
        })
    }

    /// A `width_px x height_px` lattice with square pixels, centered on the
    /// sector and just large enough to hold it plus a one pixel margin.
    pub fn fit_pixels(geo: &ImageGeometry, width_px: usize, height_px: usize) -> Result<Self> {
        geo.validate()?;
        if width_px < 4 || height_px < 4 {
            return Err(Error::InvalidGeometry(format!(
                "{width_px}x{height_px} lattice"
            )));
        }
        let (x0, x1, z0, z1) = geo.sector_bounds();
        let pixel_size_m =
            ((x1 - x0) / (width_px - 3) as f64).max((z1 - z0) / (height_px - 3) as f64);
        let cx = 0.5 * (x0 + x1);
        let cz = 0.5 * (z0 + z1);
        Ok(CartesianLayout {
            width_px,
            height_px,
            pixel_size_m,
            origin_m: [
                cx - 0.5 * (width_px - 1) as f64 * pixel_size_m,
                cz - 0.5 * (height_px - 1) as f64 * pixel_size_m,
            ],
        })
    }

    #[inline]
    pub fn pixel_center(&self, col: usize, row: usize) -> [f64; 2] {
        [
            self.origin_m[0] + col as f64 * self.pixel_size_m,
            self.origin_m[1] + row as f64 * self.pixel_size_m,
        ]
    }

    /// Inside-sector mask of this lattice, row-major.
    pub fn sector_mask(&self, geo: &ImageGeometry) -> Vec<bool> {
        let mut mask = Vec::with_capacity(self.width_px * self.height_px);
        for row in 0..self.height_px {
            for col in 0..self.width_px {
                let [x, z] = self.pixel_center(col, row);
                mask.push(geo.contains(x, z));
            }
        }
        mask
    }
}

/// Polar frame: rows are depth samples, columns are rays.
#[derive(Clone, Debug, PartialEq)]
pub struct PolarImage {
    pub geometry: ImageGeometry,
    pub data: Grid,
}

impl PolarImage {
    pub fn new(geometry: ImageGeometry, data: Grid) -> Result<Self> {
        geometry.validate()?;
        if data.rows() != geometry.n_samples || data.cols() != geometry.n_rays {
            return Err(Error::Dimension(format!(
                "polar data {}x{} for {} samples x {} rays",
                data.rows(),
                data.cols(),
                geometry.n_samples,
                geometry.n_rays
            )));
        }
        if !data.is_finite() {
            return Err(Error::InvalidParam("non-finite polar sample".into()));
        }
        Ok(PolarImage { geometry, data })
    }

    pub fn zeros(geometry: ImageGeometry) -> Self {
        PolarImage {
            data: Grid::zeros(geometry.n_samples, geometry.n_rays),
            geometry,
        }
    }

    #[inline]
    pub fn value(&self, ray: usize, sample: usize) -> f64 {
        self.data.get(sample, ray)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CartesianImage {
    pub layout: CartesianLayout,
    /// Rows run along depth (z), columns along x.
    pub data: Grid,
    pub mask: Vec<bool>,
}

impl CartesianImage {
    pub fn new(layout: CartesianLayout, data: Grid, mask: Vec<bool>) -> Result<Self> {
        if data.rows() != layout.height_px
            || data.cols() != layout.width_px
            || mask.len() != data.len()
        {
            return Err(Error::Dimension(format!(
                "cartesian data {}x{} / mask {} for layout {}x{}",
                data.rows(),
                data.cols(),
                mask.len(),
                layout.height_px,
                layout.width_px
            )));
        }
        if !data.is_finite() {
            return Err(Error::InvalidParam("non-finite pixel".into()));
        }
        let mut data = data;
        for (v, &m) in data.data_mut().iter_mut().zip(&mask) {
            if !m {
                *v = 0.0;
            }
        }
        Ok(CartesianImage { layout, data, mask })
    }

    pub fn width_px(&self) -> usize {
        self.layout.width_px
    }

    pub fn height_px(&self) -> usize {
        self.layout.height_px
    }

    pub fn inside_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}
