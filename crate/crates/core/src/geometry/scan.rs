use nalgebra::Vector3;

use super::{CartesianImage, CartesianLayout, ImageGeometry, PolarImage, Pose};
use crate::error::{Error, Result};
use crate::grid::Grid;

/// Bilinear lookup on the polar lattice at fractional (ray, sample), clamped
/// to the lattice.
fn sample_polar(img: &PolarImage, fk: f64, fs: f64) -> f64 {
    let geo = &img.geometry;
    let fk = fk.clamp(0.0, (geo.n_rays - 1) as f64);
    let fs = fs.clamp(0.0, (geo.n_samples - 1) as f64);
    let k0 = (fk.floor() as usize).min(geo.n_rays - 2);
    let s0 = (fs.floor() as usize).min(geo.n_samples - 2);
    let tk = fk - k0 as f64;
    let ts = fs - s0 as f64;
    let v00 = img.value(k0, s0);
    let v10 = img.value(k0 + 1, s0);
    let v01 = img.value(k0, s0 + 1);
    let v11 = img.value(k0 + 1, s0 + 1);
    (1.0 - ts) * ((1.0 - tk) * v00 + tk * v10) + ts * ((1.0 - tk) * v01 + tk * v11)
}

/// Scan-converts onto an auto-sized lattice that bounds the sector.
pub fn polar_to_cartesian(img: &PolarImage, pixel_size_m: f64) -> Result<CartesianImage> {
    let layout = CartesianLayout::fit(&img.geometry, pixel_size_m)?;
    polar_to_cartesian_on(img, &layout)
}

/// Scan-converts onto a given lattice. Pixels whose centers fall outside the
/// sector are masked out and set to 0.
pub fn polar_to_cartesian_on(img: &PolarImage, layout: &CartesianLayout) -> Result<CartesianImage> {
    let geo = &img.geometry;
    geo.validate()?;
    if !(layout.pixel_size_m > 0.0) {
        return Err(Error::InvalidGeometry(format!(
            "pixel size {}",
            layout.pixel_size_m
        )));
    }
    let mut data = Grid::zeros(layout.height_px, layout.width_px);
    let mut mask = vec![false; layout.width_px * layout.height_px];
    for row in 0..layout.height_px {
        for col in 0..layout.width_px {
            let [x, z] = layout.pixel_center(col, row);
            if !geo.contains(x, z) {
                continue;
            }
            let (fk, fs) = geo.polar_coords(x, z);
            data.set(row, col, sample_polar(img, fk, fs));
            mask[row * layout.width_px + col] = true;
        }
    }
    CartesianImage::new(*layout, data, mask)
}

/// Resamples a Cartesian image onto the polar lattice of `geo`.
///
/// Interpolation weights are renormalized over unmasked neighbors; a sample
/// with no unmasked pixel in its bilinear cell falls back to the mean of the
/// unmasked pixels around its nearest pixel, and is 0 if there are none.
pub fn cartesian_to_polar(img: &CartesianImage, geo: &ImageGeometry) -> Result<PolarImage> {
    geo.validate()?;
    let layout = &img.layout;
    let (w, h) = (layout.width_px, layout.height_px);
    let to_px = |x: f64, z: f64| {
        (
            (x - layout.origin_m[0]) / layout.pixel_size_m,
            (z - layout.origin_m[1]) / layout.pixel_size_m,
        )
    };
    let (x0, x1, z0, z1) = geo.sector_bounds();
    let (c0, r0) = to_px(x0, z0);
    let (c1, r1) = to_px(x1, z1);
    let lim = |v: f64, n: usize| v >= -0.5 - 1e-9 && v <= n as f64 - 0.5 + 1e-9;
    if !(lim(c0, w) && lim(c1, w) && lim(r0, h) && lim(r1, h)) {
        return Err(Error::OutOfBounds(format!(
            "sector spans pixels x [{c0:.2}, {c1:.2}], z [{r0:.2}, {r1:.2}] of a {w}x{h} image"
        )));
    }

    let valid = |c: isize, r: isize| {
        c >= 0 && r >= 0 && (c as usize) < w && (r as usize) < h && img.mask[r as usize * w + c as usize]
    };
    let mut out = Grid::zeros(geo.n_samples, geo.n_rays);
    for s in 0..geo.n_samples {
        for k in 0..geo.n_rays {
            let [x, z] = geo.sample_position(k, s);
            let (fc, fr) = to_px(x, z);
            let c0 = fc.floor() as isize;
            let r0 = fr.floor() as isize;
            let tc = fc - c0 as f64;
            let tr = fr - r0 as f64;
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for (dc, dr, wt) in [
                (0, 0, (1.0 - tc) * (1.0 - tr)),
                (1, 0, tc * (1.0 - tr)),
                (0, 1, (1.0 - tc) * tr),
                (1, 1, tc * tr),
            ] {
                let (c, r) = (c0 + dc, r0 + dr);
                if wt > 0.0 && valid(c, r) {
                    acc += wt * img.data.get(r as usize, c as usize);
                    wsum += wt;
                }
            }
            let value = if wsum > 1e-12 {
                acc / wsum
            } else {
                let nc = fc.round() as isize;
                let nr = fr.round() as isize;
                let mut sum = 0.0;
                let mut n = 0usize;
                for dr in -1..=1 {
                    for dc in -1..=1 {
                        if valid(nc + dc, nr + dr) {
                            sum += img.data.get((nr + dr) as usize, (nc + dc) as usize);
                            n += 1;
                        }
                    }
                }
                if n > 0 {
                    sum / n as f64
                } else {
                    0.0
                }
            };
            out.set(s, k, value);
        }
    }
    PolarImage::new(*geo, out)
}

/// World position of a polar sample under a frame pose. The image plane is
/// embedded at y = 0 of the frame.
pub fn pixel_to_world(
    geo: &ImageGeometry,
    pose: &Pose,
    ray: usize,
    sample: usize,
) -> Result<Vector3<f64>> {
    if ray >= geo.n_rays || sample >= geo.n_samples {
        return Err(Error::Index(format!(
            "(ray {ray}, sample {sample}) outside {}x{}",
            geo.n_rays, geo.n_samples
        )));
    }
    let [x, z] = geo.sample_position(ray, sample);
    Ok(pose.apply(&Vector3::new(x, 0.0, z)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn geo32() -> ImageGeometry {
        ImageGeometry::new(0.01, 0.06, 1.0, 32, 32).unwrap()
    }

    /// Smooth field over the sector, evaluated directly in (x, z).
    fn smooth(x: f64, z: f64) -> f64 {
        (z * 40.0).sin() * 0.5 + (x * 30.0).cos() * 0.3 + 1.0
    }

    fn smooth_polar(geo: &ImageGeometry) -> PolarImage {
        let data = Grid::from_fn(geo.n_samples, geo.n_rays, |s, k| {
            let [x, z] = geo.sample_position(k, s);
            smooth(x, z)
        });
        PolarImage::new(*geo, data).unwrap()
    }

    #[test]
    fn constant_image_converts_to_constant() {
        let geo = geo32();
        let img = PolarImage::new(geo, Grid::filled(32, 32, 1.0)).unwrap();
        let cart = polar_to_cartesian(&img, 0.0005).unwrap();
        assert!(cart.inside_count() > 0);
        for (v, m) in cart.data.data().iter().zip(&cart.mask) {
            assert_eq!(*v, if *m { 1.0 } else { 0.0 });
        }
        let back = cartesian_to_polar(&cart, &geo).unwrap();
        for v in back.data.data() {
            assert!((v - 1.0).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn single_bright_sample_lands_at_its_position() {
        let geo = geo32();
        let (k, s) = (20, 11);
        let mut data = Grid::zeros(32, 32);
        data.set(s, k, 1.0);
        let img = PolarImage::new(geo, data).unwrap();
        let cart = polar_to_cartesian(&img, 0.0004).unwrap();
        let (mut best, mut at) = (f64::MIN, (0, 0));
        for r in 0..cart.height_px() {
            for c in 0..cart.width_px() {
                if cart.data.get(r, c) > best {
                    best = cart.data.get(r, c);
                    at = (c, r);
                }
            }
        }
        let d = geo.sample_depth(s);
        let a = geo.ray_angle(k);
        let ec = (d * a.sin() - cart.layout.origin_m[0]) / cart.layout.pixel_size_m;
        let er = (d * a.cos() - cart.layout.origin_m[1]) / cart.layout.pixel_size_m;
        assert!((at.0 as f64 - ec).abs() <= 1.0 && (at.1 as f64 - er).abs() <= 1.0);
    }

    #[test]
    fn round_trip_smooth_field() {
        let geo = geo32();
        let img = smooth_polar(&geo);
        let range = img.data.max() - img.data.min();
        let cart = polar_to_cartesian(&img, 0.0002).unwrap();
        let back = cartesian_to_polar(&cart, &geo).unwrap();
        let mut worst = 0.0f64;
        for s in 1..31 {
            for k in 1..31 {
                worst = worst.max((back.value(k, s) - img.value(k, s)).abs());
            }
        }
        assert!(worst < 0.02 * range, "max err {worst} of range {range}");
    }

    #[test]
    fn fully_masked_input_gives_zeros() {
        let geo = geo32();
        let layout = CartesianLayout::fit(&geo, 0.001).unwrap();
        let n = layout.width_px * layout.height_px;
        let img = CartesianImage::new(
            layout,
            Grid::filled(layout.height_px, layout.width_px, 3.0),
            vec![false; n],
        )
        .unwrap();
        let polar = cartesian_to_polar(&img, &geo).unwrap();
        assert!(polar.data.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn undersized_image_is_out_of_bounds() {
        let geo = geo32();
        let mut layout = CartesianLayout::fit(&geo, 0.001).unwrap();
        layout.width_px /= 2;
        let n = layout.width_px * layout.height_px;
        let img = CartesianImage::new(
            layout,
            Grid::zeros(layout.height_px, layout.width_px),
            vec![true; n],
        )
        .unwrap();
        assert!(matches!(
            cartesian_to_polar(&img, &geo),
            Err(Error::OutOfBounds(_))
        ));
    }

    #[test]
    fn pixel_to_world_examples() {
        let geo = geo32();
        let id = Pose::identity();
        let d = geo.sample_depth(7);
        // center ray of an even lattice doesn't exist; use a 3-ray geometry
        let g3 = ImageGeometry::new(0.01, 0.06, 1.0, 3, 32).unwrap();
        let p = pixel_to_world(&g3, &id, 1, 7).unwrap();
        assert!((p - Vector3::new(0.0, 0.0, d)).norm() < 1e-15);
        let edge = pixel_to_world(&geo, &id, 31, 7).unwrap();
        let expect = Vector3::new(d * 0.5f64.sin(), 0.0, d * 0.5f64.cos());
        assert!((edge - expect).norm() < 1e-15);
        let shifted = Pose::from_translation(Vector3::new(0.0, 0.01, 0.0));
        let q = pixel_to_world(&geo, &shifted, 31, 7).unwrap();
        assert!((q - expect - Vector3::new(0.0, 0.01, 0.0)).norm() < 1e-15);
        assert!(matches!(
            pixel_to_world(&geo, &id, 32, 0),
            Err(Error::Index(_))
        ));
    }

    #[test]
    fn sector_corners_on_boundary() {
        let geo = geo32();
        let pose = Pose::identity();
        for (k, s) in [(0, 0), (0, 31), (31, 0), (31, 31)] {
            let p = pixel_to_world(&geo, &pose, k, s).unwrap();
            let r = p.norm();
            let a = p[0].atan2(p[2]);
            assert!(
                (r - geo.depth_min_m).abs() < 1e-12 || (r - geo.depth_max_m).abs() < 1e-12
            );
            assert!((a.abs() - 0.5 * geo.fov_rad).abs() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn scan_conversion_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000) {
            let geo = ImageGeometry::new(0.005, 0.04, 1.1, 12, 16).unwrap();
            let noise = |salt: u64| {
                Grid::from_fn(16, 12, |r, c| {
                    let h = (r as u64 * 131 + c as u64 * 17 + seed * 7 + salt).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                    (h >> 11) as f64 / (1u64 << 53) as f64
                })
            };
            let i = PolarImage::new(geo, noise(1)).unwrap();
            let j = PolarImage::new(geo, noise(2)).unwrap();
            let combo = PolarImage::new(
                geo,
                Grid::from_fn(16, 12, |r, c| a * i.data.get(r, c) + b * j.data.get(r, c)),
            ).unwrap();
            let ci = polar_to_cartesian(&i, 0.001).unwrap();
            let cj = polar_to_cartesian(&j, 0.001).unwrap();
            let cc = polar_to_cartesian(&combo, 0.001).unwrap();
            for idx in 0..cc.mask.len() {
                if cc.mask[idx] {
                    let lin = a * ci.data.data()[idx] + b * cj.data.data()[idx];
                    prop_assert!((cc.data.data()[idx] - lin).abs() < 1e-9);
                }
            }
            let pi = cartesian_to_polar(&ci, &geo).unwrap();
            let pj = cartesian_to_polar(&cj, &geo).unwrap();
            let pc = cartesian_to_polar(&cc, &geo).unwrap();
            for idx in 0..pc.data.len() {
                let lin = a * pi.data.data()[idx] + b * pj.data.data()[idx];
                prop_assert!((pc.data.data()[idx] - lin).abs() < 1e-9);
            }
        }
    }
}
