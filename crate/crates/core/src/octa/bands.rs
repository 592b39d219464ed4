//! Split-spectrum Gaussian band windows.

use crate::{Error, Result};
use num_complex::Complex64;
use rustfft::FftPlanner;

/// Adjacent windows cross at this fraction of their peak.
pub const CROSSING_LEVEL: f64 = 0.64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandWindow {
    /// Center in spectral samples.
    pub center: f64,
    pub sigma: f64,
}

impl BandWindow {
    pub fn value(&self, k: f64) -> f64 {
        let d = k - self.center;
        (-d * d / (2.0 * self.sigma * self.sigma)).exp()
    }
}

/// Center spacing at which two Gaussians of width `sigma` cross at
/// [`CROSSING_LEVEL`] of their peak.
pub fn crossing_spacing(sigma: f64) -> f64 {
    2.0 * sigma * (2.0 * (1.0 / CROSSING_LEVEL).ln()).sqrt()
}

/// `l` equal-width windows over a sweep of `k` samples. The outer windows sit
/// two sigmas inside the sweep ends.
pub fn band_windows(k: usize, l: usize) -> Result<Vec<BandWindow>> {
    if l == 0 {
        return Err(Error::invalid("band count must be at least 1"));
    }
    if k < 2 * l {
        return Err(Error::invalid(format!(
            "{l} bands are not resolvable from {k} spectral samples"
        )));
    }
    let unit = crossing_spacing(1.0);
    let sigma = k as f64 / ((l - 1) as f64 * unit + 4.0);
    if sigma < 1.0 {
        return Err(Error::invalid(format!(
            "{l} bands are not resolvable from {k} spectral samples"
        )));
    }
    let d = unit * sigma;
    let mid = (k as f64 - 1.0) / 2.0;
    Ok((0..l)
        .map(|i| BandWindow {
            center: mid + (i as f64 - (l - 1) as f64 / 2.0) * d,
            sigma,
        })
        .collect())
}

/// Windows the fringe with each band and transforms it to a complex A-scan
/// (positive depths, `k / 2` bins).
pub fn split_bands(fringe: &[f64], l: usize) -> Result<Vec<Vec<Complex64>>> {
    let k = fringe.len();
    let windows = band_windows(k, l)?;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(k);
    Ok(windows
        .iter()
        .map(|w| {
            let mut buf: Vec<Complex64> = fringe
                .iter()
                .enumerate()
                .map(|(i, &v)| Complex64::new(v * w.value(i as f64), 0.0))
                .collect();
            fft.process(&mut buf);
            buf.truncate(k / 2);
            buf
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crossing_condition() {
        let sigma = 3.7;
        let d = crossing_spacing(sigma);
        assert!((d / sigma - 1.889).abs() < 1e-3);
        let w = BandWindow { center: 0.0, sigma };
        assert!((w.value(d / 2.0) - 0.64).abs() < 1e-9);
        let ws = band_windows(1024, 3).unwrap();
        let mid = (ws[0].center + ws[1].center) / 2.0;
        assert!((ws[0].value(mid) - 0.64).abs() < 1e-9);
        assert!((ws[1].value(mid) - 0.64).abs() < 1e-9);
    }

    #[test]
    fn single_band_covers_sweep() {
        let ws = band_windows(512, 1).unwrap();
        assert_eq!(ws.len(), 1);
        assert!((ws[0].center - 255.5).abs() < 1e-12);
        assert!((ws[0].sigma - 128.0).abs() < 1e-12);
    }

    #[test]
    fn single_frequency_peaks_at_same_bin() {
        let k = 1024;
        let fringe: Vec<f64> = (0..k)
            .map(|i| (2.0 * std::f64::consts::PI * 100.0 * i as f64 / k as f64).cos())
            .collect();
        let bands = split_bands(&fringe, 3).unwrap();
        for b in &bands {
            let peak = (1..b.len())
                .max_by(|&i, &j| b[i].norm().total_cmp(&b[j].norm()))
                .unwrap();
            assert_eq!(peak, 100);
        }
    }

    #[test]
    fn too_many_bands() {
        assert!(split_bands(&[0.0; 8], 5).is_err());
        assert!(band_windows(24, 12).is_err());
    }
}
