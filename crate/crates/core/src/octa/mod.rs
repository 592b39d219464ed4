//! Multi-interscan-time OCTA, split-spectrum bands and B-scan registration.

mod bands;
mod register;

pub use bands::{band_windows, crossing_spacing, split_bands, BandWindow};
pub use register::{apply_shifts, phase_correlate, register_bscans, scored_correlate, Registration};

use crate::par::*;
use crate::volume::{OctVolume, OctaStack, Samples, Volume};
use crate::{Error, Result};
use num_complex::Complex32;
use serde::{Deserialize, Serialize};

/// How pair differences are formed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OctaMode {
    /// Differences of magnitudes (default).
    #[default]
    Amplitude,
    /// `|S₁ − S₂|² / (|S₁|² + |S₂|²)` on complex samples. Per-voxel values
    /// can exceed 1 and are clamped in the stack.
    Complex,
}

/// One pair term: (unnormalized, normalized).
#[inline]
pub fn pair_amplitude(a: f32, b: f32) -> (f64, f64) {
    let (a, b) = (a as f64, b as f64);
    let d = b - a;
    let den = a * a + b * b;
    (d.abs(), if den > 0.0 { d * d / den } else { 0.0 })
}

#[inline]
pub fn pair_complex(a: Complex32, b: Complex32) -> (f64, f64) {
    let d = (b - a).norm_sqr() as f64;
    let den = (a.norm_sqr() + b.norm_sqr()) as f64;
    (d.sqrt(), if den > 0.0 { d / den } else { 0.0 })
}

/// Unnormalized and normalized OCTA at every interscan time `M·Δt`,
/// `M = 1 … N−1`, averaged over bands and the `N − M` pairs.
pub fn octa_stack(vol: &OctVolume, mode: OctaMode) -> Result<OctaStack> {
    let n = vol.n_repeats;
    if n < 2 {
        return Err(Error::Protocol("n_repeats < 2".into()));
    }
    if mode == OctaMode::Complex && !matches!(vol.samples, Samples::Complex(_)) {
        return Err(Error::invalid("complex-difference OCTA needs complex samples"));
    }
    let l = vol.n_bands;
    let mcount = n - 1;
    let bscan = vol.nx * vol.nz;
    // Per B-scan: [M][unnorm|norm][bscan]
    let per_y: Vec<Vec<f32>> = (0..vol.ny)
        .into_par_iter()
        .map(|y| {
            let mut out = vec![0.0f32; mcount * 2 * bscan];
            let mut su = vec![0.0f64; bscan];
            let mut sn = vec![0.0f64; bscan];
            for m in 1..n {
                su.iter_mut().for_each(|v| *v = 0.0);
                sn.iter_mut().for_each(|v| *v = 0.0);
                for band in 0..l {
                    for j in 0..n - m {
                        let o1 = vol.frame_offset(band, j) + y * bscan;
                        let o2 = vol.frame_offset(band, j + m) + y * bscan;
                        for k in 0..bscan {
                            let (u, v) = match (&vol.samples, mode) {
                                (Samples::Complex(s), OctaMode::Complex) => pair_complex(s[o1 + k], s[o2 + k]),
                                (Samples::Complex(s), OctaMode::Amplitude) => pair_amplitude(s[o1 + k].norm(), s[o2 + k].norm()),
                                (Samples::Amplitude(s), _) => pair_amplitude(s[o1 + k], s[o2 + k]),
                            };
                            su[k] += u;
                            sn[k] += v;
                        }
                    }
                }
                let terms = (l * (n - m)) as f64;
                let base = (m - 1) * 2 * bscan;
                for k in 0..bscan {
                    out[base + k] = (su[k] / terms) as f32;
                    out[base + bscan + k] = ((sn[k] / terms) as f32).clamp(0.0, 1.0);
                }
            }
            out
        })
        .collect();
    let mut unnormalized = Vec::with_capacity(mcount);
    let mut normalized = Vec::with_capacity(mcount);
    for m in 0..mcount {
        let mut u = Vec::with_capacity(vol.voxels());
        let mut v = Vec::with_capacity(vol.voxels());
        for chunk in &per_y {
            let base = m * 2 * bscan;
            u.extend_from_slice(&chunk[base..base + bscan]);
            v.extend_from_slice(&chunk[base + bscan..base + 2 * bscan]);
        }
        unnormalized.push(Volume::from_vec(vol.ny, vol.nx, vol.nz, u)?);
        normalized.push(Volume::from_vec(vol.ny, vol.nx, vol.nz, v)?);
    }
    Ok(OctaStack {
        protocol: vol.protocol.clone(),
        unnormalized,
        normalized,
    })
}

/// Pooled complex decorrelation at each interscan time:
/// `Σ|S_{j+M} − S_j|² / Σ(|S_{j+M}|² + |S_j|²)` over the selected voxels, all
/// bands and all pairs, with a batch-means standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledDecorrelation {
    pub tau_ms: Vec<f64>,
    pub value: Vec<f64>,
    pub std_error: Vec<f64>,
}

pub fn pooled_complex_decorrelation(vol: &OctVolume, voxels: &[usize], batches: usize) -> Result<PooledDecorrelation> {
    let Samples::Complex(s) = &vol.samples else {
        return Err(Error::invalid("pooled complex decorrelation needs complex samples"));
    };
    let n = vol.n_repeats;
    if n < 2 {
        return Err(Error::Protocol("n_repeats < 2".into()));
    }
    let batches = batches.clamp(2, voxels.len().max(2));
    let per = voxels.len().div_ceil(batches).max(1);
    let mut value = Vec::new();
    let mut std_error = Vec::new();
    for m in 1..n {
        let parts: Vec<(f64, f64)> = voxels
            .par_chunks(per)
            .map(|chunk| {
                let (mut num, mut den) = (0.0f64, 0.0f64);
                for &v in chunk {
                    for band in 0..vol.n_bands {
                        for j in 0..n - m {
                            let a = s[vol.frame_offset(band, j) + v];
                            let b = s[vol.frame_offset(band, j + m) + v];
                            num += (b - a).norm_sqr() as f64;
                            den += (a.norm_sqr() + b.norm_sqr()) as f64;
                        }
                    }
                }
                (num, den)
            })
            .collect();
        let num: f64 = parts.iter().map(|p| p.0).sum();
        let den: f64 = parts.iter().map(|p| p.1).sum();
        let ratios: Vec<f64> = parts.iter().filter(|p| p.1 > 0.0).map(|p| p.0 / p.1).collect();
        let k = ratios.len() as f64;
        let mean = ratios.iter().sum::<f64>() / k;
        let var = ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
        value.push(if den > 0.0 { num / den } else { 0.0 });
        std_error.push((var / k).sqrt());
    }
    Ok(PooledDecorrelation {
        tau_ms: vol.protocol.interscan_times(),
        value,
        std_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::ScanProtocol;

    fn protocol(n: usize, l: usize) -> ScanProtocol {
        ScanProtocol {
            n_repeats: n,
            n_bands: l,
            ..ScanProtocol::preset_3x3()
        }
    }

    #[test]
    fn identical_repeats_give_zero() {
        let vol = OctVolume::new(protocol(4, 2), [2, 4, 2, 3, 5], Samples::Amplitude(vec![1.7; 240])).unwrap();
        let s = octa_stack(&vol, OctaMode::Amplitude).unwrap();
        assert_eq!(s.m_count(), 3);
        for m in 0..3 {
            assert!(s.unnormalized[m].data.iter().all(|&v| v == 0.0));
            assert!(s.normalized[m].data.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn full_decorrelation_pair() {
        let vol = OctVolume::new(protocol(2, 1), [1, 2, 1, 1, 1], Samples::Amplitude(vec![2.5, 0.0])).unwrap();
        let s = octa_stack(&vol, OctaMode::Amplitude).unwrap();
        assert_eq!(s.normalized[0].data[0], 1.0);
        assert_eq!(s.unnormalized[0].data[0], 2.5);
    }

    #[test]
    fn zero_pair_contributes_zero() {
        let vol = OctVolume::new(protocol(2, 1), [1, 2, 1, 1, 1], Samples::Amplitude(vec![0.0, 0.0])).unwrap();
        let s = octa_stack(&vol, OctaMode::Amplitude).unwrap();
        assert_eq!(s.normalized[0].data[0], 0.0);
    }

    #[test]
    fn single_repeat_is_rejected() {
        let vol = OctVolume::new(protocol(2, 1), [1, 1, 1, 1, 2], Samples::Amplitude(vec![1.0, 2.0])).unwrap();
        assert!(octa_stack(&vol, OctaMode::Amplitude).is_err());
    }

    #[test]
    fn complex_mode_uses_phase() {
        // Same magnitude, opposite phase: amplitude mode sees nothing.
        let s = vec![Complex32::new(1.0, 0.0), Complex32::new(-1.0, 0.0)];
        let vol = OctVolume::new(protocol(2, 1), [1, 2, 1, 1, 1], Samples::Complex(s)).unwrap();
        let a = octa_stack(&vol, OctaMode::Amplitude).unwrap();
        let c = octa_stack(&vol, OctaMode::Complex).unwrap();
        assert_eq!(a.normalized[0].data[0], 0.0);
        assert_eq!(c.normalized[0].data[0], 1.0);
        assert_eq!(c.unnormalized[0].data[0], 2.0);
    }
}
