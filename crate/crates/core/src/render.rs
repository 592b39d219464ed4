//! En-face projections and VISTA color images.

use crate::filters::{median_2d, percentile};
use crate::layers::SlabBounds;
use crate::volume::{Grid, Volume};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reducer {
    #[default]
    Mean,
    Max,
}

/// Per-column reduction over the slab depth range; empty columns give 0.
pub fn enface(vol: &Volume<f32>, slab: &SlabBounds, reducer: Reducer) -> Result<Grid<f32>> {
    if slab.dims() != (vol.ny, vol.nx) {
        return Err(Error::shape("slab grid does not match volume"));
    }
    let data = vol
        .data
        .chunks(vol.nz)
        .enumerate()
        .map(|(i, col)| {
            let r = slab.start[i].min(vol.nz)..slab.end[i].min(vol.nz);
            if r.is_empty() {
                return 0.0;
            }
            let s = &col[r];
            match reducer {
                Reducer::Mean => (s.iter().map(|&v| v as f64).sum::<f64>() / s.len() as f64) as f32,
                Reducer::Max => s.iter().copied().fold(f32::NEG_INFINITY, f32::max),
            }
        })
        .collect();
    Ok(Grid {
        ny: vol.ny,
        nx: vol.nx,
        data,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub alpha_range: (f64, f64),
    pub hue_range: (f64, f64),
    /// Side length of the α median filter (pixels, odd).
    pub median_px: usize,
    /// Percentile of √en-face mapped to full brightness.
    pub value_percentile: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            alpha_range: (0.1, 2.5),
            hue_range: (0.67, 0.0),
            median_px: 5,
            value_percentile: 99.0,
        }
    }
}

/// Linear α → hue map, clamped at both ends.
pub fn alpha_hue(alpha: f64, range: (f64, f64), hue: (f64, f64)) -> f64 {
    let t = ((alpha - range.0) / (range.1 - range.0)).clamp(0.0, 1.0);
    hue.0 + (hue.1 - hue.0) * t
}

/// Hexcone HSV → RGB; all channels in `[0, 1]`, hue in turns.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as u8 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// 8-bit RGB image, row-major `(y, x)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub ny: usize,
    pub nx: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = 3 * (y * self.nx + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// PNG bytes with fixed encoder settings.
    pub fn to_png(&self) -> Result<Vec<u8>> {
        use image::codecs::png::{CompressionType, FilterType, PngEncoder};
        use image::ImageEncoder;
        let mut buf = Vec::new();
        PngEncoder::new_with_quality(&mut buf, CompressionType::Default, FilterType::Adaptive)
            .write_image(&self.data, self.nx as u32, self.ny as u32, image::ExtendedColorType::Rgb8)
            .map_err(|e| Error::invalid(format!("png encoding failed: {e}")))?;
        Ok(buf)
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_png()?).map_err(|e| Error::io(path, e))
    }
}

fn to_u8(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Brightness from √en-face, scaled so the given percentile maps to 1.
pub fn value_channel(enface: &Grid<f32>, pct: f64) -> (Vec<f64>, f64) {
    let root: Vec<f32> = enface.data.iter().map(|v| v.max(0.0).sqrt()).collect();
    let scale = percentile(&root, pct).filter(|s| *s > 0.0).unwrap_or(1.0) as f64;
    (root.iter().map(|&r| (r as f64 / scale).min(1.0)).collect(), scale)
}

/// Record of how an image was made, written next to the PNG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderInfo {
    pub alpha_range: (f64, f64),
    pub hue_range: (f64, f64),
    pub median_px: usize,
    pub value_percentile: f64,
    pub value_scale: f64,
}

/// VISTA image: hue from median-filtered α (NaN = undefined, rendered gray),
/// saturation 1, value from √en-face.
pub fn vista_image(alpha: &Grid<f32>, enface: &Grid<f32>, cfg: &RenderConfig) -> Result<(RgbImage, RenderInfo)> {
    if !alpha.same_shape(enface) {
        return Err(Error::shape("α map and en-face image differ in size"));
    }
    let h = cfg.median_px / 2;
    let smooth = median_2d(alpha, h, h, true);
    let (value, scale) = value_channel(enface, cfg.value_percentile);
    let mut data = Vec::with_capacity(3 * value.len());
    for (a, v) in smooth.data.iter().zip(&value) {
        let rgb = if a.is_finite() {
            hsv_to_rgb(alpha_hue(*a as f64, cfg.alpha_range, cfg.hue_range), 1.0, *v)
        } else {
            [*v; 3]
        };
        data.extend(rgb.iter().map(|&c| to_u8(c)));
    }
    Ok((
        RgbImage {
            ny: alpha.ny,
            nx: alpha.nx,
            data,
        },
        RenderInfo {
            alpha_range: cfg.alpha_range,
            hue_range: cfg.hue_range,
            median_px: cfg.median_px,
            value_percentile: cfg.value_percentile,
            value_scale: scale,
        },
    ))
}

/// Writes `path` and `path.json` (the [`RenderInfo`]).
pub fn write_with_sidecar(img: &RgbImage, info: &RenderInfo, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    img.write_png(path)?;
    let side = path.with_extension("json");
    let text = serde_json::to_string_pretty(info).map_err(|e| Error::invalid(e.to_string()))?;
    std::fs::write(&side, text + "\n").map_err(|e| Error::io(&side, e))
}

/// Hue from the intensity-weighted mean depth within the slab (0.67 at the
/// top, 0 at the bottom), value from the slab maximum scaled by the global
/// maximum.
pub fn depth_colorcode(vol: &Volume<f32>, slab: &SlabBounds) -> Result<RgbImage> {
    let peak = enface(vol, slab, Reducer::Max)?;
    let gmax = peak.data.iter().copied().fold(0.0f32, f32::max) as f64;
    let mut data = Vec::with_capacity(3 * vol.ny * vol.nx);
    for (i, col) in vol.data.chunks(vol.nz).enumerate() {
        let r = slab.start[i].min(vol.nz)..slab.end[i].min(vol.nz);
        let (mut w, mut wz) = (0.0f64, 0.0f64);
        for z in r.clone() {
            let v = col[z].max(0.0) as f64;
            w += v;
            wz += v * (z - r.start) as f64;
        }
        let rgb = if w <= 0.0 || gmax <= 0.0 {
            [0.0; 3]
        } else {
            let span = (r.len().max(2) - 1) as f64;
            let rel = wz / w / span;
            hsv_to_rgb(0.67 * (1.0 - rel), 1.0, peak.data[i] as f64 / gmax)
        };
        data.extend(rgb.iter().map(|&c| to_u8(c)));
    }
    Ok(RgbImage {
        ny: vol.ny,
        nx: vol.nx,
        data,
    })
}
