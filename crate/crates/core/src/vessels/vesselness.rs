//! Multiscale Hessian ridge response for bright curvilinear structures.

use crate::filters::gaussian_derivative_2d;
use crate::volume::Grid;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VesselnessKind {
    #[default]
    Jerman,
    Frangi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VesselnessConfig {
    pub kind: VesselnessKind,
    /// Scales as multiples of the A-scan spacing.
    pub scale_factors: Vec<f64>,
    /// Eigenvalue regularization cutoff, relative to the per-scale maximum.
    pub tau: f64,
    /// Width of the blob suppression term on `|λ_small| / |λ_large|`.
    pub blob_beta: f64,
    /// Frangi structureness weight, relative to the maximum Hessian norm.
    pub frangi_c: f64,
}

impl Default for VesselnessConfig {
    fn default() -> Self {
        VesselnessConfig {
            kind: VesselnessKind::Jerman,
            scale_factors: vec![1.0, 1.5, 2.0],
            tau: 0.5,
            blob_beta: 0.5,
            frangi_c: 0.5,
        }
    }
}

/// Hessian eigenvalues `(small, large)` by magnitude, σ²-normalized.
fn hessian_eigen(g: &Grid<f32>, sy: f64, sx: f64) -> Vec<(f64, f64)> {
    let hyy = gaussian_derivative_2d(g, sy, sx, 2, 0);
    let hxx = gaussian_derivative_2d(g, sy, sx, 0, 2);
    let hxy = gaussian_derivative_2d(g, sy, sx, 1, 1);
    (0..g.data.len())
        .map(|i| {
            let a = hyy.data[i] as f64 * sy * sy;
            let c = hxx.data[i] as f64 * sx * sx;
            let b = hxy.data[i] as f64 * sy * sx;
            let m = 0.5 * (a + c);
            let d = (0.25 * (a - c) * (a - c) + b * b).sqrt();
            let (l1, l2) = (m - d, m + d);
            if l1.abs() >= l2.abs() {
                (l2, l1)
            } else {
                (l1, l2)
            }
        })
        .collect()
}

fn jerman(eig: &[(f64, f64)], tau: f64, blob_beta: f64, eps: f64) -> Vec<f64> {
    let lmax = eig.iter().map(|e| -e.1).fold(0.0f64, f64::max);
    if lmax <= eps {
        return vec![0.0; eig.len()];
    }
    let cut = tau * lmax;
    eig.iter()
        .map(|&(small, large)| {
            let l = -large;
            if l <= 0.0 || cut <= 0.0 {
                return 0.0;
            }
            let lr = if l > cut { l } else { cut };
            let v = if l >= lr / 2.0 {
                1.0
            } else {
                l * l * (lr - l) * 27.0 / (l + lr).powi(3)
            };
            let rb = small.abs() / large.abs();
            v * (-rb * rb / (2.0 * blob_beta * blob_beta)).exp()
        })
        .collect()
}

fn frangi(eig: &[(f64, f64)], c_rel: f64, beta: f64, eps: f64) -> Vec<f64> {
    let smax = eig
        .iter()
        .map(|e| (e.0 * e.0 + e.1 * e.1).sqrt())
        .fold(0.0f64, f64::max);
    if smax <= eps {
        return vec![0.0; eig.len()];
    }
    let c = c_rel * smax;
    eig.iter()
        .map(|&(small, large)| {
            if large >= 0.0 || c <= 0.0 {
                return 0.0;
            }
            let rb = small / large;
            let s2 = small * small + large * large;
            (-rb * rb / (2.0 * beta * beta)).exp() * (1.0 - (-s2 / (2.0 * c * c)).exp())
        })
        .collect()
}

/// Maximum over scales of the ridge response; values in `[0, 1]`.
///
/// `scales_um` are Gaussian scales; `spacing_um` is the grid spacing
/// `(slow, fast)`.
pub fn vesselness_2d(img: &Grid<f32>, scales_um: &[f64], spacing_um: (f64, f64), cfg: &VesselnessConfig) -> Result<Grid<f32>> {
    if scales_um.is_empty() || scales_um.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::invalid("vesselness scales must be positive"));
    }
    if img.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("vesselness input is not finite"));
    }
    // Hessians below this level are rounding noise of a flat image.
    let eps = 1e-5 * img.data.iter().fold(0.0f32, |m, v| m.max(v.abs())) as f64;
    let mut out = vec![0.0f64; img.data.len()];
    for &s in scales_um {
        let eig = hessian_eigen(img, s / spacing_um.0, s / spacing_um.1);
        let r = match cfg.kind {
            VesselnessKind::Jerman => jerman(&eig, cfg.tau, cfg.blob_beta, eps),
            VesselnessKind::Frangi => frangi(&eig, cfg.frangi_c, cfg.blob_beta, eps),
        };
        for (o, v) in out.iter_mut().zip(r) {
            *o = o.max(v);
        }
    }
    Ok(Grid {
        ny: img.ny,
        nx: img.nx,
        data: out.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SP: (f64, f64) = (2.0, 2.0);

    fn image(f: impl Fn(f64, f64) -> f64) -> Grid<f32> {
        let n = 80;
        Grid::from_vec(
            n,
            n,
            (0..n * n)
                .map(|i| f((i / n) as f64 * SP.0, (i % n) as f64 * SP.1) as f32)
                .collect(),
        )
        .unwrap()
    }

    fn line() -> Grid<f32> {
        image(|_, x| (-(x - 80.0).powi(2) / (2.0 * 36.0)).exp())
    }

    fn blob() -> Grid<f32> {
        image(|y, x| (-((x - 80.0).powi(2) + (y - 80.0).powi(2)) / (2.0 * 36.0)).exp())
    }

    #[test]
    fn constant_image_gives_zero() {
        for kind in [VesselnessKind::Jerman, VesselnessKind::Frangi] {
            let cfg = VesselnessConfig { kind, ..Default::default() };
            let v = vesselness_2d(&Grid::filled(30, 30, 3.0), &[4.0, 6.0], SP, &cfg).unwrap();
            assert!(v.data.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn ridge_beats_background_and_blob() {
        for kind in [VesselnessKind::Jerman, VesselnessKind::Frangi] {
            let cfg = VesselnessConfig { kind, ..Default::default() };
            let l = vesselness_2d(&line(), &[4.0, 6.0, 9.0], SP, &cfg).unwrap();
            let on = *l.get(40, 40);
            let bg: f32 = (0..80).map(|y| *l.get(y, 5) + *l.get(y, 75)).sum::<f32>() / 160.0;
            assert!(on >= 10.0 * bg.max(1e-6), "{kind:?}: on {on} bg {bg}");
            let b = vesselness_2d(&blob(), &[4.0, 6.0, 9.0], SP, &cfg).unwrap();
            assert!(*b.get(40, 40) < on, "{kind:?}: blob {} line {on}", b.get(40, 40));
            assert!(l.data.iter().chain(&b.data).all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn bad_scales() {
        let g = Grid::filled(5, 5, 0.0);
        assert!(vesselness_2d(&g, &[], SP, &VesselnessConfig::default()).is_err());
        assert!(vesselness_2d(&g, &[0.0], SP, &VesselnessConfig::default()).is_err());
    }
}
