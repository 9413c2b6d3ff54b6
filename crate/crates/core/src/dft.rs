//! Small DFT helpers: 2-D FFTs and dense per-axis transforms of tensors.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

/// In-place unnormalized 2-D FFT of a row-major `rows x cols` array.
/// Forward uses the `exp(-2 pi i jk/N)` kernel.
pub fn fft2(data: &mut [Complex64], rows: usize, cols: usize, inverse: bool) {
    assert_eq!(data.len(), rows * cols);
    let mut planner = FftPlanner::new();
    let row_fft = if inverse {
        planner.plan_fft_inverse(cols)
    } else {
        planner.plan_fft_forward(cols)
    };
    row_fft.process(data);
    let col_fft = if inverse {
        planner.plan_fft_inverse(rows)
    } else {
        planner.plan_fft_forward(rows)
    };
    let mut col = vec![Complex64::new(0.0, 0.0); rows];
    for c in 0..cols {
        for r in 0..rows {
            col[r] = data[r * cols + c];
        }
        col_fft.process(&mut col);
        for r in 0..rows {
            data[r * cols + c] = col[r];
        }
    }
}

/// Matrix mapping a length-`d` spectrum to spatial offsets `-radius..=radius`
/// by the normalized inverse DFT. Row-major, `(2 radius + 1) x d`.
pub fn idft_crop_matrix(d: usize, radius: usize) -> Vec<Complex64> {
    let w = 2 * radius + 1;
    let mut m = Vec::with_capacity(w * d);
    for a in 0..w {
        let off = a as i64 - radius as i64;
        for k in 0..d {
            let t = 2.0 * PI * ((k as i64 * off).rem_euclid(d as i64)) as f64 / d as f64;
            m.push(Complex64::from_polar(1.0 / d as f64, t));
        }
    }
    m
}

/// Transpose of a row-major `rows x cols` matrix.
pub fn transpose(m: &[Complex64], rows: usize, cols: usize) -> Vec<Complex64> {
    let mut t = vec![Complex64::new(0.0, 0.0); m.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = m[r * cols + c];
        }
    }
    t
}

/// Apply `mat` (`out_len x shape[axis]`, row-major) along one axis of a
/// row-major tensor. Returns the new tensor; `shape[axis]` becomes `out_len`.
pub fn apply_axis(
    data: &[Complex64],
    shape: &mut [usize],
    axis: usize,
    mat: &[Complex64],
    out_len: usize,
) -> Vec<Complex64> {
    let in_len = shape[axis];
    assert_eq!(mat.len(), out_len * in_len);
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = vec![Complex64::new(0.0, 0.0); outer * out_len * inner];
    for o in 0..outer {
        let src = &data[o * in_len * inner..(o + 1) * in_len * inner];
        let dst = &mut out[o * out_len * inner..(o + 1) * out_len * inner];
        for a in 0..out_len {
            let row = &mat[a * in_len..(a + 1) * in_len];
            let drow = &mut dst[a * inner..(a + 1) * inner];
            for (k, &m) in row.iter().enumerate() {
                if m == Complex64::new(0.0, 0.0) {
                    continue;
                }
                let srow = &src[k * inner..(k + 1) * inner];
                for (d, s) in drow.iter_mut().zip(srow) {
                    *d += m * s;
                }
            }
        }
    }
    shape[axis] = out_len;
    out
}

/// Apply the same matrix along every axis of a cubic tensor of given rank.
pub fn apply_all_axes(
    data: &[Complex64],
    rank: usize,
    in_len: usize,
    mat: &[Complex64],
    out_len: usize,
) -> Vec<Complex64> {
    let mut shape = vec![in_len; rank];
    let mut cur = data.to_vec();
    for axis in 0..rank {
        cur = apply_axis(&cur, &mut shape, axis, mat, out_len);
    }
    cur
}
