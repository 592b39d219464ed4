//! Separable Gaussian filtering, median filtering and order statistics.

use crate::par::*;
use crate::volume::{Grid, Volume};

/// Sampled Gaussian (order 0), or its first/second derivative, truncated at
/// `ceil(4σ)`. Correlation-style taps: `out[k] = Σ t[i] f[k + i]`.
///
/// Taps are moment-normalized on the sampled support: order 0 sums to 1,
/// order 1 returns exactly 1 on `f = x`, order 2 sums to 0 and returns exactly
/// 2 on `f = x²`.
pub fn gaussian_kernel(sigma: f64, order: u8) -> Vec<f64> {
    if sigma <= 0.0 {
        return match order {
            0 => vec![1.0],
            1 => vec![-0.5, 0.0, 0.5],
            _ => vec![1.0, -2.0, 1.0],
        };
    }
    let r = (4.0 * sigma).ceil().max(1.0) as i64;
    let xs: Vec<f64> = (-r..=r).map(|i| i as f64).collect();
    let g: Vec<f64> = xs.iter().map(|x| (-x * x / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / norm).collect();
    match order {
        0 => g,
        1 => {
            let m2: f64 = xs.iter().zip(&g).map(|(x, v)| x * x * v).sum();
            xs.iter().zip(&g).map(|(x, v)| x * v / m2).collect()
        }
        _ => {
            let var: f64 = xs.iter().zip(&g).map(|(x, v)| x * x * v).sum();
            let raw: Vec<f64> = xs.iter().zip(&g).map(|(x, v)| (x * x - var) * v).collect();
            let m: f64 = raw.iter().zip(&xs).map(|(t, x)| t * x * x).sum();
            raw.iter().map(|t| 2.0 * t / m).collect()
        }
    }
}

/// Correlates a row-major buffer with `taps` along `axis`, replicating edges.
pub fn filter_axis(data: &[f32], dims: &[usize], axis: usize, taps: &[f64]) -> Vec<f32> {
    let n = dims[axis];
    let stride: usize = dims[axis + 1..].iter().product();
    let r = (taps.len() / 2) as isize;
    let mut out = vec![0.0f32; data.len()];
    out.par_chunks_mut(n * stride)
        .zip(data.par_chunks(n * stride))
        .for_each(|(ob, ib)| {
            for k in 0..n {
                for s in 0..stride {
                    let mut acc = 0.0f64;
                    for (t, &w) in taps.iter().enumerate() {
                        let j = (k as isize + t as isize - r).clamp(0, n as isize - 1) as usize;
                        acc += w * ib[j * stride + s] as f64;
                    }
                    ob[k * stride + s] = acc as f32;
                }
            }
        });
    out
}

/// Gaussian blur of a 2D grid with per-axis sigmas in pixels.
pub fn gaussian_2d(g: &Grid<f32>, sigma_y: f64, sigma_x: f64) -> Grid<f32> {
    let dims = [g.ny, g.nx];
    let a = filter_axis(&g.data, &dims, 0, &gaussian_kernel(sigma_y, 0));
    let b = filter_axis(&a, &dims, 1, &gaussian_kernel(sigma_x, 0));
    Grid {
        ny: g.ny,
        nx: g.nx,
        data: b,
    }
}

/// Gaussian derivative of a 2D grid: `dy`, `dx` are derivative orders.
pub fn gaussian_derivative_2d(g: &Grid<f32>, sigma_y: f64, sigma_x: f64, dy: u8, dx: u8) -> Grid<f32> {
    let dims = [g.ny, g.nx];
    let a = filter_axis(&g.data, &dims, 0, &gaussian_kernel(sigma_y, dy));
    let b = filter_axis(&a, &dims, 1, &gaussian_kernel(sigma_x, dx));
    Grid {
        ny: g.ny,
        nx: g.nx,
        data: b,
    }
}

/// Gaussian blur of a volume with per-axis sigmas `(y, x, z)` in voxels.
/// A zero sigma skips that axis.
pub fn gaussian_3d(v: &Volume<f32>, sigma: [f64; 3]) -> Volume<f32> {
    let dims = [v.ny, v.nx, v.nz];
    let mut data = v.data.clone();
    for (axis, &s) in sigma.iter().enumerate() {
        if s > 0.0 {
            data = filter_axis(&data, &dims, axis, &gaussian_kernel(s, 0));
        }
    }
    Volume {
        ny: v.ny,
        nx: v.nx,
        nz: v.nz,
        data,
    }
}

/// Median with the midpoint convention for even counts. Reorders `v`.
/// Returns NaN for an empty slice.
pub fn median_in_place(v: &mut [f32]) -> f32 {
    let n = v.len();
    if n == 0 {
        return f32::NAN;
    }
    let cmp = |a: &f32, b: &f32| a.total_cmp(b);
    let (lo, &mut hi, _) = v.select_nth_unstable_by(n / 2, cmp);
    if n % 2 == 1 {
        hi
    } else {
        let below = lo.iter().copied().max_by(cmp).unwrap_or(hi);
        ((below as f64 + hi as f64) / 2.0) as f32
    }
}

pub fn median(v: &[f32]) -> f32 {
    median_in_place(&mut v.to_vec())
}

/// Linear-interpolated percentile (`p` in [0, 100]) of the finite values.
pub fn percentile(v: &[f32], p: f64) -> Option<f32> {
    let mut s: Vec<f32> = v.iter().copied().filter(|x| x.is_finite()).collect();
    if s.is_empty() {
        return None;
    }
    s.sort_by(f32::total_cmp);
    let pos = p.clamp(0.0, 100.0) / 100.0 * (s.len() - 1) as f64;
    let i = pos.floor() as usize;
    let f = pos - i as f64;
    let hi = s[(i + 1).min(s.len() - 1)];
    Some((s[i] as f64 * (1.0 - f) + hi as f64 * f) as f32)
}

/// Median filter over a `(2h_y+1) × (2h_x+1)` window, ignoring NaN.
///
/// With `keep_undefined`, NaN pixels stay NaN; otherwise they take the median
/// of their defined neighbours (or stay NaN if there are none).
pub fn median_2d(g: &Grid<f32>, hy: usize, hx: usize, keep_undefined: bool) -> Grid<f32> {
    let (ny, nx) = g.dims();
    let mut out = vec![f32::NAN; ny * nx];
    out.par_chunks_mut(nx.max(1)).enumerate().for_each(|(y, row)| {
        let mut buf = Vec::with_capacity((2 * hy + 1) * (2 * hx + 1));
        for (x, o) in row.iter_mut().enumerate() {
            let c = *g.get(y, x);
            if keep_undefined && c.is_nan() {
                continue;
            }
            buf.clear();
            for yy in y.saturating_sub(hy)..(y + hy + 1).min(ny) {
                for xx in x.saturating_sub(hx)..(x + hx + 1).min(nx) {
                    let v = *g.get(yy, xx);
                    if !v.is_nan() {
                        buf.push(v);
                    }
                }
            }
            *o = median_in_place(&mut buf);
        }
    });
    Grid { ny, nx, data: out }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median(&[0.1, 0.9, 0.2]), 0.2);
        assert!((median(&[0.1, 0.3]) - 0.2).abs() < 1e-7);
        assert_eq!(median(&[5.0]), 5.0);
        assert!(median(&[]).is_nan());
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn percentile_endpoints() {
        let v: Vec<f32> = (0..=100).map(|i| i as f32).collect();
        assert_eq!(percentile(&v, 99.0), Some(99.0));
        assert_eq!(percentile(&v, 0.0), Some(0.0));
        assert_eq!(percentile(&[], 50.0), None);
    }

    #[test]
    fn gaussian_preserves_constants_and_mass() {
        let g = Grid::filled(9, 11, 3.0f32);
        let b = gaussian_2d(&g, 1.5, 2.0);
        assert!(b.data.iter().all(|v| (v - 3.0).abs() < 1e-5));
        let k = gaussian_kernel(2.0, 0);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn second_derivative_of_parabola() {
        // f(x) = x², f'' = 2 in the interior.
        let nx = 41;
        let g = Grid::from_vec(1, nx, (0..nx).map(|x| ((x as f32) - 20.0).powi(2)).collect()).unwrap();
        let d = gaussian_derivative_2d(&g, 0.0, 1.5, 0, 2);
        assert!((d.get(0, 20) - 2.0).abs() < 0.02, "{}", d.get(0, 20));
        let d1 = gaussian_derivative_2d(&g, 0.0, 1.5, 0, 1);
        assert!((d1.get(0, 25) - 10.0).abs() < 0.1, "{}", d1.get(0, 25));
    }

    #[test]
    fn median_removes_salt() {
        let mut g = Grid::filled(7, 7, 1.0f32);
        g.set(3, 3, 9.0);
        let m = median_2d(&g, 1, 1, true);
        assert!(m.data.iter().all(|&v| v == 1.0));
    }
}
