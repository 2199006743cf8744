//! Thin FFT helpers over `rustfft`.
//!
//! Plans are cached per thread, so concurrent workers never share planner state.
//! All transforms are unnormalized; callers apply their own scaling.

use std::cell::RefCell;

use num_complex::Complex64;
use rustfft::FftPlanner;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// In-place transform of every contiguous length-`n` row of `data`.
pub fn fft_rows(data: &mut [Complex64], n: usize, dir: Direction) {
    debug_assert_eq!(data.len() % n, 0);
    let plan = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        match dir {
            Direction::Forward => p.plan_fft_forward(n),
            Direction::Inverse => p.plan_fft_inverse(n),
        }
    });
    plan.process(data);
}

pub fn fft_1d(data: &mut [Complex64], dir: Direction) {
    let n = data.len();
    fft_rows(data, n, dir);
}

/// In-place 2D transform of a row-major `n x n` array.
pub fn fft_2d(data: &mut [Complex64], n: usize, dir: Direction) {
    debug_assert_eq!(data.len(), n * n);
    fft_rows(data, n, dir);
    transpose_square(data, n);
    fft_rows(data, n, dir);
    transpose_square(data, n);
}

/// Transform a field stored as 1D (`len == n`) or square 2D (`len == n*n`).
pub fn fft_nd(data: &mut [Complex64], n: usize, dims: usize, dir: Direction) {
    match dims {
        1 => fft_1d(data, dir),
        _ => fft_2d(data, n, dir),
    }
}

pub fn transpose_square<T: Copy>(data: &mut [T], n: usize) {
    const BLOCK: usize = 32;
    for ib in (0..n).step_by(BLOCK) {
        for jb in (ib..n).step_by(BLOCK) {
            for i in ib..(ib + BLOCK).min(n) {
                let j0 = if ib == jb { i + 1 } else { jb };
                for j in j0..(jb + BLOCK).min(n) {
                    data.swap(i * n + j, j * n + i);
                }
            }
        }
    }
}

/// Rotate by `n/2` along every axis. For even `n` this is its own inverse and
/// maps centered sample ordering onto FFT ordering and back.
pub fn half_shift(data: &mut [Complex64], n: usize, dims: usize) {
    match dims {
        1 => data.rotate_left(n / 2),
        _ => {
            for row in data.chunks_exact_mut(n) {
                row.rotate_left(n / 2);
            }
            data.rotate_left((n / 2) * n);
        }
    }
}

/// Signed FFT bin index for position `k` of an `n`-point transform.
#[inline]
pub fn signed_bin(k: usize, n: usize) -> i64 {
    if k < n.div_ceil(2) {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_inverse_round_trip_2d() {
        let n = 16;
        let orig: Vec<Complex64> = (0..n * n)
            .map(|i| Complex64::new((i as f64).sin(), (i as f64 * 0.3).cos()))
            .collect();
        let mut data = orig.clone();
        fft_2d(&mut data, n, Direction::Forward);
        fft_2d(&mut data, n, Direction::Inverse);
        let scale = 1.0 / (n * n) as f64;
        for (a, b) in data.iter().zip(&orig) {
            assert!((a * scale - b).norm() < 1e-12);
        }
    }

    #[test]
    fn transpose_is_involution() {
        let n = 70;
        let orig: Vec<usize> = (0..n * n).collect();
        let mut data = orig.clone();
        transpose_square(&mut data, n);
        assert_eq!(data[1], n);
        transpose_square(&mut data, n);
        assert_eq!(data, orig);
    }

    #[test]
    fn signed_bins() {
        assert_eq!(signed_bin(0, 8), 0);
        assert_eq!(signed_bin(3, 8), 3);
        assert_eq!(signed_bin(4, 8), -4);
        assert_eq!(signed_bin(7, 8), -1);
    }
}
