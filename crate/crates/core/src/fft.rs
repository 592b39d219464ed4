//! Multidimensional FFTs over row-major complex buffers.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Smallest `m ≥ n` whose only prime factors are 2, 3 and 5.
pub fn good_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r.is_multiple_of(p) {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// In-place N-dimensional transform of a row-major buffer with shape `dims`.
///
/// The inverse is normalized by the total element count so that
/// `inverse(forward(x)) == x`.
pub fn fft_nd(data: &mut [Complex64], dims: &[usize], inverse: bool) {
    let total: usize = dims.iter().product();
    assert_eq!(data.len(), total, "buffer does not match dims");
    let mut planner = FftPlanner::<f64>::new();
    for axis in 0..dims.len() {
        let n = dims[axis];
        if n <= 1 {
            continue;
        }
        let fft = if inverse {
            planner.plan_fft_inverse(n)
        } else {
            planner.plan_fft_forward(n)
        };
        let stride: usize = dims[axis + 1..].iter().product();
        transform_axis(data, n, stride, &fft);
    }
    if inverse {
        let k = 1.0 / total as f64;
        data.iter_mut().for_each(|v| *v *= k);
    }
}

fn transform_axis(data: &mut [Complex64], n: usize, stride: usize, fft: &Arc<dyn Fft<f64>>) {
    use crate::par::*;
    if stride == 1 {
        data.par_chunks_mut(n).for_each(|line| {
            let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
            fft.process_with_scratch(line, &mut scratch);
        });
        return;
    }
    // Each outer block holds `n * stride` values; lines run with step `stride`.
    data.par_chunks_mut(n * stride).for_each(|block| {
        let mut line = vec![Complex64::default(); n * stride];
        // Gather all `stride` lines of this block contiguously, transform, scatter.
        for k in 0..n {
            for s in 0..stride {
                line[s * n + k] = block[k * stride + s];
            }
        }
        let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
        fft.process_with_scratch(&mut line, &mut scratch);
        for k in 0..n {
            for s in 0..stride {
                block[k * stride + s] = line[s * n + k];
            }
        }
    });
}

/// Signed frequency index of bin `k` in an `n`-point transform.
#[inline]
pub fn signed_freq(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}
