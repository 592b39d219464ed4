//! Two-dimensional locally weighted linear regression.

use crate::filters::median_in_place;
use crate::volume::Grid;
use crate::{Error, Result};

#[inline]
fn tricube(d: f64) -> f64 {
    let a = d.abs();
    if a >= 1.0 {
        0.0
    } else {
        let t = 1.0 - a * a * a;
        t * t * t
    }
}

/// Window half-widths (samples) for a square span in µm.
pub fn half_widths(span_um: f64, spacing_um: (f64, f64)) -> Result<(usize, usize)> {
    let hy = (span_um / (2.0 * spacing_um.0)).floor();
    let hx = (span_um / (2.0 * spacing_um.1)).floor();
    if !(hy >= 1.0 && hx >= 1.0) {
        return Err(Error::invalid(format!(
            "lowess span {span_um} µm covers fewer than 3×3 samples"
        )));
    }
    Ok((hy as usize, hx as usize))
}

/// Degree-1 lowess over a `span_um × span_um` window with tricube weights
/// (product form, reaching zero one sample beyond the window edge).
///
/// NaN samples carry no weight, so they are filled from their neighbours.
/// Outputs stay NaN only where the whole window is undefined. `robust_iters`
/// adds bisquare reweighting passes.
pub fn lowess_2d(g: &Grid<f32>, span_um: f64, spacing_um: (f64, f64), robust_iters: usize) -> Result<Grid<f32>> {
    let (hy, hx) = half_widths(span_um, spacing_um)?;
    let base: Vec<f64> = g.data.iter().map(|v| if v.is_finite() { 1.0 } else { 0.0 }).collect();
    let mut fit = weighted_pass(g, &base, hy, hx);
    let magnitude = g.data.iter().filter(|v| v.is_finite()).fold(0.0f64, |m, &v| m.max((v as f64).abs()));
    // Residuals at this scale are f32 rounding, not outliers.
    let floor = 16.0 * f32::EPSILON as f64 * magnitude;
    for _ in 0..robust_iters {
        let mut res: Vec<f32> = g
            .data
            .iter()
            .zip(&fit)
            .filter(|(z, f)| z.is_finite() && f.is_finite())
            .map(|(z, f)| (*z as f64 - f).abs() as f32)
            .collect();
        let mean_abs = res.iter().map(|&r| r as f64).sum::<f64>() / res.len().max(1) as f64;
        let mut s = median_in_place(&mut res) as f64;
        if !(s > 0.0) {
            s = mean_abs;
        }
        if !(s > floor) {
            break;
        }
        let w: Vec<f64> = g
            .data
            .iter()
            .zip(&fit)
            .zip(&base)
            .map(|((z, f), b)| {
                if *b == 0.0 || !f.is_finite() {
                    return 0.0;
                }
                let u = (*z as f64 - f) / (6.0 * s);
                if u.abs() < 1.0 {
                    (1.0 - u * u).powi(2)
                } else {
                    0.0
                }
            })
            .collect();
        fit = weighted_pass(g, &w, hy, hx);
    }
    Ok(Grid {
        ny: g.ny,
        nx: g.nx,
        data: fit.into_iter().map(|v| v as f32).collect(),
    })
}

fn weighted_pass(g: &Grid<f32>, w: &[f64], hy: usize, hx: usize) -> Vec<f64> {
    let (ny, nx) = g.dims();
    let tx: Vec<f64> = (0..=hx).map(|d| tricube(d as f64 / (hx + 1) as f64)).collect();
    let ty: Vec<f64> = (0..=hy).map(|d| tricube(d as f64 / (hy + 1) as f64)).collect();
    // Row pass: moments in dx. w0, w1, w2 (weights × dx^a), z0, z1 (weights × z × dx^a).
    let mut rows = vec![[0.0f64; 5]; ny * nx];
    for y in 0..ny {
        for x in 0..nx {
            let mut acc = [0.0f64; 5];
            let lo = x.saturating_sub(hx);
            let hi = (x + hx).min(nx - 1);
            for xx in lo..=hi {
                let i = y * nx + xx;
                let wi = w[i];
                if wi == 0.0 {
                    continue;
                }
                let d = xx as f64 - x as f64;
                let k = tx[d.abs() as usize] * wi;
                let z = g.data[i] as f64;
                acc[0] += k;
                acc[1] += k * d;
                acc[2] += k * d * d;
                acc[3] += k * z;
                acc[4] += k * z * d;
            }
            rows[y * nx + x] = acc;
        }
    }
    let mut out = vec![f64::NAN; ny * nx];
    for y in 0..ny {
        for x in 0..nx {
            // s00 s10 s01 s20 s11 s02 t00 t10 t01
            let mut s = [0.0f64; 9];
            let lo = y.saturating_sub(hy);
            let hi = (y + hy).min(ny - 1);
            for yy in lo..=hi {
                let d = yy as f64 - y as f64;
                let k = ty[d.abs() as usize];
                let r = &rows[yy * nx + x];
                s[0] += k * r[0];
                s[1] += k * r[1];
                s[2] += k * r[0] * d;
                s[3] += k * r[2];
                s[4] += k * r[1] * d;
                s[5] += k * r[0] * d * d;
                s[6] += k * r[3];
                s[7] += k * r[4];
                s[8] += k * r[3] * d;
            }
            out[y * nx + x] = solve_local(&s);
        }
    }
    out
}

fn solve_local(s: &[f64; 9]) -> f64 {
    let [s00, s10, s01, s20, s11, s02, t00, t10, t01] = *s;
    if s00 <= 0.0 {
        return f64::NAN;
    }
    // Intercept of the weighted plane fit by Cramer's rule.
    let det = s00 * (s20 * s02 - s11 * s11) - s10 * (s10 * s02 - s11 * s01) + s01 * (s10 * s11 - s20 * s01);
    let scale = s00 * s20.max(1e-300) * s02.max(1e-300);
    if det.abs() <= 1e-10 * scale {
        // Degenerate support (a line or a point): fall back to a weighted line
        // along whichever axis has spread, or the weighted mean.
        if s20 * s00 - s10 * s10 > 1e-10 * s00 * s20.max(1e-300) {
            return (t00 * s20 - t10 * s10) / (s00 * s20 - s10 * s10);
        }
        if s02 * s00 - s01 * s01 > 1e-10 * s00 * s02.max(1e-300) {
            return (t00 * s02 - t01 * s01) / (s00 * s02 - s01 * s01);
        }
        return t00 / s00;
    }
    let num = t00 * (s20 * s02 - s11 * s11) - s10 * (t10 * s02 - s11 * t01) + s01 * (t10 * s11 - s20 * t01);
    num / det
}

#[cfg(test)]
mod tests {
    use super::*;

    const SP: (f64, f64) = (6.7, 6.7);

    #[test]
    fn constants_are_unchanged() {
        let g = Grid::filled(20, 25, 4.5f32);
        let s = lowess_2d(&g, 150.0, SP, 0).unwrap();
        assert!(s.data.iter().all(|v| (v - 4.5).abs() < 1e-5));
    }

    #[test]
    fn planes_are_reproduced() {
        let (ny, nx) = (30, 40);
        let data = (0..ny * nx).map(|i| (2.0 * (i % nx) as f64 + 3.0 * (i / nx) as f64) as f32).collect();
        let g = Grid::from_vec(ny, nx, data).unwrap();
        let s = lowess_2d(&g, 100.0, SP, 0).unwrap();
        for (a, b) in s.data.iter().zip(&g.data) {
            assert!((a - b).abs() < 1e-3 * b.abs().max(1.0), "{a} {b}");
        }
        let s2 = lowess_2d(&s, 100.0, SP, 0).unwrap();
        for (a, b) in s2.data.iter().zip(&s.data) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
        }
    }

    #[test]
    fn span_too_small() {
        let g = Grid::filled(5, 5, 1.0f32);
        assert!(lowess_2d(&g, 10.0, SP, 0).is_err());
        assert!(lowess_2d(&g, 13.4, SP, 0).is_ok());
    }

    #[test]
    fn missing_samples_are_filled() {
        let mut g = Grid::filled(10, 10, 2.0f32);
        g.set(4, 4, f32::NAN);
        let s = lowess_2d(&g, 40.0, SP, 0).unwrap();
        assert!((s.get(4, 4) - 2.0).abs() < 1e-6);
    }

    #[test]
    fn robust_pass_resists_outliers() {
        let mut g = Grid::filled(15, 15, 1.0f32);
        g.set(7, 7, 100.0);
        let plain = lowess_2d(&g, 60.0, SP, 0).unwrap();
        let robust = lowess_2d(&g, 60.0, SP, 2).unwrap();
        assert!((robust.get(7, 8) - 1.0).abs() < (plain.get(7, 8) - 1.0).abs());
    }

    #[test]
    fn spike_is_suppressed() {
        let mut g = Grid::from_vec(60, 60, (0..3600).map(|i| ((i / 60) as f32) * 0.5 + (i % 60) as f32).collect()).unwrap();
        let base = *g.get(30, 30);
        g.set(30, 30, base + 50.0);
        let s = lowess_2d(&g, 300.0, (6.7, 6.7), 0).unwrap();
        assert!((s.get(30, 30) - base).abs() < 0.2 * 50.0);
    }
}
