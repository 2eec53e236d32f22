use super::FeatureMap;
use crate::error::{Error, Result};
use crate::grid::Grid;

/// Sobel gradient magnitude, replicate border.
pub fn sobel_magnitude(img: &Grid) -> Grid {
    let (rows, cols) = (img.rows(), img.cols());
    let at = |r: isize, c: isize| {
        let r = r.clamp(0, rows as isize - 1) as usize;
        let c = c.clamp(0, cols as isize - 1) as usize;
        img.get(r, c)
    };
    Grid::from_fn(rows, cols, |r, c| {
        let (r, c) = (r as isize, c as isize);
        let gx = (at(r - 1, c + 1) + 2.0 * at(r, c + 1) + at(r + 1, c + 1))
            - (at(r - 1, c - 1) + 2.0 * at(r, c - 1) + at(r + 1, c - 1));
        let gy = (at(r + 1, c - 1) + 2.0 * at(r + 1, c) + at(r + 1, c + 1))
            - (at(r - 1, c - 1) + 2.0 * at(r - 1, c) + at(r - 1, c + 1));
        gx.hypot(gy)
    })
}

/// Normalized 1-D Gaussian taps for a kernel of `size` taps, sigma = size / 4.
/// Tap `i` sits at offset `i - size / 2`.
pub fn gaussian_taps(size: usize) -> Vec<f64> {
    let sigma = size as f64 / 4.0;
    let center = (size as f64 - 1.0) / 2.0;
    let mut taps: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - center).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Separable convolution with replicate border.
pub fn blur(img: &Grid, taps: &[f64]) -> Grid {
    let (rows, cols) = (img.rows(), img.cols());
    let half = (taps.len() / 2) as isize;
    let horizontal = Grid::from_fn(rows, cols, |r, c| {
        taps.iter()
            .enumerate()
            .map(|(i, t)| {
                let cc = (c as isize + i as isize - half).clamp(0, cols as isize - 1) as usize;
                t * img.get(r, cc)
            })
            .sum()
    });
    Grid::from_fn(rows, cols, |r, c| {
        taps.iter()
            .enumerate()
            .map(|(i, t)| {
                let rr = (r as isize + i as isize - half).clamp(0, rows as isize - 1) as usize;
                t * horizontal.get(rr, c)
            })
            .sum()
    })
}

/// Binary bone-boundary map from a confidence map: Sobel magnitude thresholded
/// at `sobel_threshold` of its maximum, blurred with a `blur_kernel_px` Gaussian
/// and rescaled to a unit peak.
pub fn shadow_boundary(
    conf: &FeatureMap,
    sobel_threshold: f64,
    blur_kernel_px: usize,
) -> Result<FeatureMap> {
    if !(sobel_threshold > 0.0 && sobel_threshold < 1.0) || blur_kernel_px < 1 {
        return Err(Error::InvalidParam(format!(
            "sobel threshold {sobel_threshold}, kernel {blur_kernel_px}"
        )));
    }
    let grad = sobel_magnitude(&conf.data);
    let peak = grad.max();
    if !(peak > 1e-12) {
        return FeatureMap::new(Grid::zeros(grad.rows(), grad.cols()));
    }
    let cut = sobel_threshold * peak;
    let binary = grad.map(|g| if g >= cut { 1.0 } else { 0.0 });
    let blurred = blur(&binary, &gaussian_taps(blur_kernel_px));
    let top = blurred.max();
    FeatureMap::new(blurred.map(|v| (v / top).clamp(0.0, 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_map_has_no_boundary() {
        let conf = FeatureMap::new(Grid::filled(16, 16, 0.4)).unwrap();
        let out = shadow_boundary(&conf, 0.3, 6).unwrap();
        assert!(out.data.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn step_edge_is_located() {
        let step = 9;
        let conf = FeatureMap::new(Grid::from_fn(24, 12, |r, _| if r <= step { 1.0 } else { 0.0 })).unwrap();
        let out = shadow_boundary(&conf, 0.3, 6).unwrap();
        for c in 0..12 {
            let best = (0..24)
                .max_by(|&a, &b| out.data.get(a, c).total_cmp(&out.data.get(b, c)))
                .unwrap();
            assert!((best as isize - step as isize).abs() <= 1, "column {c}: {best}");
        }
        assert!(out.data.max() <= 1.0 && out.data.min() >= 0.0);
    }

    #[test]
    fn taps_are_normalized() {
        for size in 1..9 {
            let t = gaussian_taps(size);
            assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
