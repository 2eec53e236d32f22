use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// In-place 2-D FFT of a row-major `rows x cols` buffer. The inverse is
/// normalized by `1 / (rows * cols)`.
pub(crate) fn fft2(data: &mut [Complex64], rows: usize, cols: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(cols), planner.plan_fft_inverse(rows))
    } else {
        (planner.plan_fft_forward(cols), planner.plan_fft_forward(rows))
    };
    for row in data.chunks_exact_mut(cols) {
        row_fft.process(row);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); rows];
    for c in 0..cols {
        for r in 0..rows {
            column[r] = data[r * cols + c];
        }
        col_fft.process(&mut column);
        for r in 0..rows {
            data[r * cols + c] = column[r];
        }
    }
    if inverse {
        let scale = 1.0 / (rows * cols) as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }
}

/// Signed DFT frequency (cycles per sample) of bin `i` in an `n`-point transform.
#[inline]
pub(crate) fn bin_frequency(i: usize, n: usize) -> f64 {
    let signed = if i < n.div_ceil(2) {
        i as f64
    } else {
        i as f64 - n as f64
    };
    signed / n as f64
}

/// Mirror index into `0..n` with period `2n` (edge sample repeated).
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_inverse_round_trip() {
        let (rows, cols) = (8, 16);
        let orig: Vec<Complex64> = (0..rows * cols)
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), 0.0))
            .collect();
        let mut buf = orig.clone();
        fft2(&mut buf, rows, cols, false);
        fft2(&mut buf, rows, cols, true);
        for (a, b) in buf.iter().zip(&orig) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 4), 0);
        assert_eq!(reflect(-2, 4), 1);
        assert_eq!(reflect(4, 4), 3);
        assert_eq!(reflect(5, 4), 2);
        assert_eq!(reflect(9, 4), 1);
        assert_eq!(bin_frequency(3, 8), 3.0 / 8.0);
        assert_eq!(bin_frequency(5, 8), -3.0 / 8.0);
    }
}
