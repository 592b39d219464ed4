//! Surface segmentation on structural (mean amplitude) volumes.

use super::lowess::lowess_2d;
use crate::filters::{filter_axis, gaussian_kernel, median_2d};
use crate::par::*;
use crate::protocol::ScanProtocol;
use crate::volume::{Grid, LayerSurfaces, Surface, Volume};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Tunables for surface detection. Lengths in µm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LayerConfig {
    pub rpe_span_um: f64,
    pub ilm_span_um: f64,
    pub inl_span_um: f64,
    pub rnfl_thickness_span_um: f64,
    /// Top rows excluded from the ILM search (specular artifacts).
    pub ilm_skip_px: usize,
    /// Depth below the ILM searched for the RNFL posterior boundary.
    pub rnfl_search_um: f64,
    /// The INL search stops this far above the RPE.
    /// ILM, RNFL and INL searches stop this far above the RPE.
    pub inl_stop_above_rpe_um: f64,
    pub fine_rpe_window_um: f64,
    pub fine_rpe_median_um: f64,
    /// Minimum edge strength relative to the A-scan mean intensity.
    pub min_edge_contrast: f64,
    /// Search radius when snapping a guidance point to its feature.
    pub snap_radius_um: f64,
    pub robust_iters: usize,
}

impl Default for LayerConfig {
    fn default() -> Self {
        LayerConfig {
            rpe_span_um: 500.0,
            ilm_span_um: 150.0,
            inl_span_um: 300.0,
            rnfl_thickness_span_um: 1000.0,
            ilm_skip_px: 10,
            rnfl_search_um: 150.0,
            inl_stop_above_rpe_um: 20.0,
            fine_rpe_window_um: 20.0,
            fine_rpe_median_um: 200.0,
            min_edge_contrast: 0.05,
            snap_radius_um: 15.0,
            robust_iters: 0,
        }
    }
}

/// A guidance point. Without `snap` the surface is pinned to `depth_um` at
/// `(x, y)` after smoothing; with `snap` the raw detection there is replaced
/// by the strongest feature within the snap radius of `depth_um`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Override {
    pub x: usize,
    pub y: usize,
    pub layer: Surface,
    pub depth_um: f64,
    #[serde(default)]
    pub snap: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OverrideFile {
    #[serde(default, rename = "override")]
    pub overrides: Vec<Override>,
}

/// Reads `[[override]]` tables from a TOML file.
pub fn load_overrides(path: impl AsRef<Path>) -> Result<Vec<Override>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let f: OverrideFile = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    Ok(f.overrides)
}

fn spacing(p: &ScanProtocol) -> (f64, f64) {
    (p.bscan_spacing_um(), p.ascan_spacing_um)
}

fn axial_smooth(vol: &Volume<f32>, sigma_px: f64) -> Vec<f32> {
    filter_axis(&vol.data, &[vol.ny, vol.nx, vol.nz], 2, &gaussian_kernel(sigma_px, 0))
}

fn transverse_smooth(data: &[f32], dims: [usize; 3]) -> Vec<f32> {
    let taps = [0.25, 0.5, 0.25];
    let a = filter_axis(data, &dims, 0, &taps);
    filter_axis(&a, &dims, 1, &taps)
}

/// Coarse RPE: brightest sample of each axially smoothed A-scan, then lowess.
/// Returns depths in µm and a flag grid (A-scans without signal).
pub fn segment_rpe(vol: &Volume<f32>, protocol: &ScanProtocol, span_um: f64) -> Result<(Grid<f32>, Grid<u8>)> {
    let dz = protocol.axial_spacing_um as f32;
    let sm = axial_smooth(vol, 1.0);
    let nz = vol.nz;
    let mut raw = Grid::filled(vol.ny, vol.nx, f32::NAN);
    let mut flags = Grid::filled(vol.ny, vol.nx, 0u8);
    for (i, col) in sm.chunks(nz).enumerate() {
        let (mut best, mut bz) = (0.0f32, None);
        for (z, &v) in col.iter().enumerate() {
            if v > best {
                best = v;
                bz = Some(z);
            }
        }
        match bz {
            Some(z) => raw.data[i] = z as f32 * dz,
            None => flags.data[i] = 1,
        }
    }
    if flags.data.iter().all(|&f| f == 1) {
        return Err(Error::invalid("volume has no signal; cannot segment the RPE"));
    }
    let s = lowess_2d(&raw, span_um, spacing(protocol), 0)?;
    Ok((s, flags))
}

/// A volume with every A-scan shifted by an integer number of pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Flattened {
    pub volume: Volume<f32>,
    /// Pixels added to the depth index: `flat[z + shift] = orig[z]`.
    pub shift: Grid<i32>,
    /// A-scans whose shift was clamped.
    pub flagged: Grid<u8>,
    /// Depth (µm) of the reference surface in the flattened volume.
    pub target_um: f64,
}

/// Shifts each A-scan so `surface_um` sits at `target_um`.
pub fn flatten(vol: &Volume<f32>, surface_um: &Grid<f32>, target_um: f64, dz: f64) -> Result<Flattened> {
    if surface_um.dims() != (vol.ny, vol.nx) {
        return Err(Error::shape("surface grid does not match volume"));
    }
    let nz = vol.nz as i32;
    let mut shift = Grid::filled(vol.ny, vol.nx, 0i32);
    let mut flagged = Grid::filled(vol.ny, vol.nx, 0u8);
    for (i, &s) in surface_um.data.iter().enumerate() {
        let raw = if s.is_finite() {
            ((target_um - s as f64) / dz).round() as i64
        } else {
            flagged.data[i] = 1;
            0
        };
        let lim = (nz - 1) as i64;
        if raw.abs() > lim {
            flagged.data[i] = 1;
        }
        shift.data[i] = raw.clamp(-lim, lim) as i32;
    }
    Ok(Flattened {
        volume: shift_columns(vol, &shift, 1),
        shift,
        flagged,
        target_um,
    })
}

/// Inverse of [`flatten`]; samples shifted out of range come back as zero.
pub fn unflatten(flat: &Flattened) -> Volume<f32> {
    shift_columns(&flat.volume, &flat.shift, -1)
}

fn shift_columns(vol: &Volume<f32>, shift: &Grid<i32>, sign: i32) -> Volume<f32> {
    let nz = vol.nz;
    let mut out = vec![0.0f32; vol.len()];
    out.par_chunks_mut(nz).enumerate().for_each(|(i, col)| {
        let s = sign * shift.data[i];
        let src = &vol.data[i * nz..(i + 1) * nz];
        for (z, o) in col.iter_mut().enumerate() {
            let from = z as i64 - s as i64;
            if from >= 0 && (from as usize) < nz {
                *o = src[from as usize];
            }
        }
    });
    Volume {
        ny: vol.ny,
        nx: vol.nx,
        nz,
        data: out,
    }
}

/// Inner surfaces in flattened coordinates (µm).
#[derive(Debug, Clone, PartialEq)]
pub struct InnerLayers {
    pub ilm: Grid<f32>,
    pub rnfl_posterior: Grid<f32>,
    pub inl_center: Grid<f32>,
    pub flagged: Grid<u8>,
}

fn snap_feature(col: &[f32], grad: &[f32], layer: Surface, depth_um: f64, radius_um: f64, dz: f64) -> Option<f32> {
    let c = depth_um / dz;
    let r = radius_um / dz;
    let lo = (c - r).floor().max(0.0) as usize;
    let hi = ((c + r).ceil() as usize).min(col.len().saturating_sub(2));
    if lo > hi {
        return None;
    }
    let pick = |score: &dyn Fn(usize) -> f32| (lo..=hi).max_by(|&a, &b| score(a).total_cmp(&score(b)));
    let z = match layer {
        Surface::Ilm => pick(&|z| grad[z]).map(|z| z as f32 + 0.5),
        Surface::RnflPosterior => pick(&|z| -grad[z]).map(|z| z as f32 + 0.5),
        Surface::InlCenter => pick(&|z| -col[z]).map(|z| z as f32),
        Surface::Rpe | Surface::FineRpe => pick(&|z| col[z]).map(|z| z as f32),
    }?;
    Some(z * dz as f32)
}

/// ILM (strongest rise), RNFL posterior (strongest fall below the ILM) and
/// INL center (darkest point above the RPE) on an RPE-flattened volume.
pub fn segment_inner_layers(
    flat: &Volume<f32>,
    rpe_um: f64,
    protocol: &ScanProtocol,
    cfg: &LayerConfig,
    overrides: &[Override],
) -> Result<InnerLayers> {
    let dz = protocol.axial_spacing_um;
    let (ny, nx, nz) = flat.dims();
    let dims = [ny, nx, nz];
    let pre = transverse_smooth(&axial_smooth(flat, 1.0), dims);
    let rpe_z = ((rpe_um / dz).round() as usize).min(nz);
    let rnfl_span = (cfg.rnfl_search_um / dz).round() as usize;
    let inl_stop = rpe_z.saturating_sub((cfg.inl_stop_above_rpe_um / dz).round() as usize);

    let mut ilm = Grid::filled(ny, nx, f32::NAN);
    let mut rnfl = Grid::filled(ny, nx, f32::NAN);
    let mut inl = Grid::filled(ny, nx, f32::NAN);
    let mut flagged = Grid::filled(ny, nx, 0u8);
    let dzf = dz as f32;
    for (i, col) in pre.chunks(nz).enumerate() {
        let grad: Vec<f32> = col.windows(2).map(|w| w[1] - w[0]).collect();
        let mean = col[..rpe_z.max(1)].iter().sum::<f32>() / rpe_z.max(1) as f32;
        let thresh = cfg.min_edge_contrast as f32 * mean;
        let (y, x) = (i / nx, i % nx);
        let start = cfg.ilm_skip_px.min(grad.len());
        let ilm_end = inl_stop.min(grad.len());
        let ilm_z = (start..ilm_end)
            .filter(|&z| grad[z] > thresh && grad[z] > 0.0)
            .max_by(|&a, &b| grad[a].total_cmp(&grad[b]).then(b.cmp(&a)));
        let Some(iz) = ilm_z else {
            flagged.set(y, x, 1);
            continue;
        };
        ilm.set(y, x, (iz as f32 + 0.5) * dzf);
        let r_end = (iz + 1 + rnfl_span).min(ilm_end);
        let rz = (iz + 1..r_end)
            .filter(|&z| -grad[z] > thresh)
            .max_by(|&a, &b| (-grad[a]).total_cmp(&-grad[b]).then(b.cmp(&a)));
        let Some(rz) = rz else {
            flagged.set(y, x, 1);
            continue;
        };
        rnfl.set(y, x, (rz as f32 + 0.5) * dzf);
        let nz_ = (rz + 1..inl_stop).min_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
        match nz_ {
            Some(z) => inl.set(y, x, z as f32 * dzf),
            None => flagged.set(y, x, 1),
        }
    }

    let mut pins = Vec::new();
    for o in overrides {
        if o.y >= ny || o.x >= nx {
            return Err(Error::invalid(format!("override at ({}, {}) outside the grid", o.x, o.y)));
        }
        let target = match o.layer {
            Surface::Ilm => &mut ilm,
            Surface::RnflPosterior => &mut rnfl,
            Surface::InlCenter => &mut inl,
            _ => continue,
        };
        if o.snap {
            let i = o.y * nx + o.x;
            let col = &pre[i * nz..(i + 1) * nz];
            let grad: Vec<f32> = col.windows(2).map(|w| w[1] - w[0]).collect();
            if let Some(d) = snap_feature(col, &grad, o.layer, o.depth_um, cfg.snap_radius_um, dz) {
                target.set(o.y, o.x, d);
            }
        } else {
            target.set(o.y, o.x, o.depth_um as f32);
            pins.push(o.clone());
        }
    }

    let sp = spacing(protocol);
    let thick = Grid {
        ny,
        nx,
        data: rnfl.data.iter().zip(&ilm.data).map(|(r, i)| r - i).collect(),
    };
    let ilm_s = lowess_2d(&ilm, cfg.ilm_span_um, sp, cfg.robust_iters)?;
    let thick_s = lowess_2d(&thick, cfg.rnfl_thickness_span_um, sp, cfg.robust_iters)?;
    let mut rnfl_s = Grid {
        ny,
        nx,
        data: ilm_s.data.iter().zip(&thick_s.data).map(|(a, b)| a + b).collect(),
    };
    let mut inl_s = lowess_2d(&inl, cfg.inl_span_um, sp, cfg.robust_iters)?;
    let mut ilm_s = ilm_s;
    for o in &pins {
        let g = match o.layer {
            Surface::Ilm => &mut ilm_s,
            Surface::RnflPosterior => &mut rnfl_s,
            _ => &mut inl_s,
        };
        g.set(o.y, o.x, o.depth_um as f32);
    }
    Ok(InnerLayers {
        ilm: ilm_s,
        rnfl_posterior: rnfl_s,
        inl_center: inl_s,
        flagged,
    })
}

/// Posterior-most local maximum within the window around the coarse RPE,
/// then a median filter. Returns flattened depths (µm) and fallback flags.
pub fn refine_rpe(flat: &Volume<f32>, rpe_um: f64, protocol: &ScanProtocol, cfg: &LayerConfig) -> Result<(Grid<f32>, Grid<u8>)> {
    let dz = protocol.axial_spacing_um;
    let (ny, nx, nz) = flat.dims();
    let pre = transverse_smooth(&flat.data, [ny, nx, nz]);
    let c = (rpe_um / dz).round() as i64;
    let w = (cfg.fine_rpe_window_um / dz).round() as i64;
    let lo = (c - w).max(1) as usize;
    let hi = ((c + w) as usize).min(nz.saturating_sub(2));
    let mut out = Grid::filled(ny, nx, rpe_um as f32);
    let mut flags = Grid::filled(ny, nx, 0u8);
    for (i, col) in pre.chunks(nz).enumerate() {
        let peak = (lo..=hi).rev().find(|&z| col[z] > col[z - 1] && col[z] >= col[z + 1]);
        match peak {
            Some(z) => out.data[i] = (z as f64 * dz) as f32,
            None => flags.data[i] = 1,
        }
    }
    let (sy, sx) = spacing(protocol);
    let hy = (cfg.fine_rpe_median_um / (2.0 * sy)).floor() as usize;
    let hx = (cfg.fine_rpe_median_um / (2.0 * sx)).floor() as usize;
    Ok((median_2d(&out, hy, hx, false), flags))
}

/// Full surface set in absolute (unflattened) depths.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerResult {
    pub surfaces: LayerSurfaces,
    pub flatten_shift: Grid<i32>,
}

/// RPE → flatten → inner layers → fine RPE, with ordering enforced.
pub fn segment_layers(structural: &Volume<f32>, protocol: &ScanProtocol, cfg: &LayerConfig, overrides: &[Override]) -> Result<LayerResult> {
    let dz = protocol.axial_spacing_um;
    let (ny, nx, _) = structural.dims();
    let (mut rpe, mut flags) = segment_rpe(structural, protocol, cfg.rpe_span_um)?;
    for o in overrides.iter().filter(|o| o.layer == Surface::Rpe) {
        if o.y < ny && o.x < nx {
            rpe.set(o.y, o.x, o.depth_um as f32);
        }
    }
    let mut sorted: Vec<f32> = rpe.data.iter().copied().filter(|v| v.is_finite()).collect();
    let target = (crate::filters::median_in_place(&mut sorted) as f64 / dz).round() * dz;
    let flat = flatten(structural, &rpe, target, dz)?;
    let to_flat = |o: &Override| {
        let s = *flat.shift.get(o.y.min(ny - 1), o.x.min(nx - 1)) as f64;
        Override {
            depth_um: o.depth_um + s * dz,
            ..o.clone()
        }
    };
    let flat_overrides: Vec<Override> = overrides.iter().map(to_flat).collect();
    let inner = segment_inner_layers(&flat.volume, target, protocol, cfg, &flat_overrides)?;
    let (fine, fine_flags) = refine_rpe(&flat.volume, target, protocol, cfg)?;
    let unshift = |g: &Grid<f32>| Grid {
        ny,
        nx,
        data: g
            .data
            .iter()
            .zip(&flat.shift.data)
            .map(|(v, &s)| v - (s as f64 * dz) as f32)
            .collect(),
    };
    let mut ilm = unshift(&inner.ilm);
    let mut rnfl = unshift(&inner.rnfl_posterior);
    let mut inl = unshift(&inner.inl_center);
    let fine_rpe = unshift(&fine);
    for o in overrides.iter().filter(|o| !o.snap && o.y < ny && o.x < nx) {
        let g = match o.layer {
            Surface::Ilm => &mut ilm,
            Surface::RnflPosterior => &mut rnfl,
            Surface::InlCenter => &mut inl,
            _ => continue,
        };
        g.set(o.y, o.x, o.depth_um as f32);
    }
    for i in 0..ny * nx {
        flags.data[i] |= inner.flagged.data[i] | fine_flags.data[i] | flat.flagged.data[i];
    }
    let nz_um = structural.nz as f32 * dz as f32;
    enforce_order(&mut ilm, &mut rnfl, &mut inl, &mut rpe, &mut flags, dz as f32, nz_um);
    Ok(LayerResult {
        surfaces: LayerSurfaces {
            ilm,
            rnfl_posterior: rnfl,
            inl_center: inl,
            rpe,
            fine_rpe,
            flagged: flags,
        },
        flatten_shift: flat.shift,
    })
}

/// Makes `ILM < RNFLp < INLc < RPE` hold everywhere, flagging every A-scan
/// that needed a correction or an in-fill.
pub fn enforce_order(
    ilm: &mut Grid<f32>,
    rnfl: &mut Grid<f32>,
    inl: &mut Grid<f32>,
    rpe: &mut Grid<f32>,
    flags: &mut Grid<u8>,
    min_gap: f32,
    depth_um: f32,
) {
    for i in 0..ilm.data.len() {
        let mut s = [ilm.data[i], rnfl.data[i], inl.data[i], rpe.data[i]];
        let ok = s.iter().all(|v| v.is_finite()) && s[0] < s[1] && s[1] < s[2] && s[2] < s[3];
        if ok {
            continue;
        }
        flags.data[i] = 1;
        if !s[3].is_finite() {
            s[3] = depth_um - min_gap;
        }
        if !s[0].is_finite() {
            s[0] = 0.0;
        }
        s[0] = s[0].min(s[3] - 3.0 * min_gap).max(0.0);
        for k in 1..3 {
            let upper = s[3] - (3 - k) as f32 * min_gap;
            let lower = s[k - 1] + min_gap;
            s[k] = if s[k].is_finite() { s[k].clamp(lower, upper.max(lower)) } else { lower };
        }
        if s[3] <= s[2] {
            s[3] = s[2] + min_gap;
        }
        ilm.data[i] = s[0];
        rnfl.data[i] = s[1];
        inl.data[i] = s[2];
        rpe.data[i] = s[3];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DZ: f64 = 2.7;

    fn proto(ny: usize, nx: usize) -> ScanProtocol {
        let mut p = ScanProtocol::preset_3x3();
        p.n_bscans = ny;
        p.ascans_per_bscan = nx;
        p.fov_mm = (nx as f64 * 6.7e-3, ny as f64 * 6.7e-3);
        p
    }

    /// Volume from a per-A-scan profile `f(y, x, depth_um)`.
    fn build(ny: usize, nx: usize, nz: usize, f: impl Fn(usize, usize, f64) -> f32) -> Volume<f32> {
        let mut v = Volume::filled(ny, nx, nz, 0.0f32);
        for y in 0..ny {
            for x in 0..nx {
                for z in 0..nz {
                    v.set(y, x, z, f(y, x, z as f64 * DZ));
                }
            }
        }
        v
    }

    fn plane(d: f64, at: f64, width: f64) -> f32 {
        if (d - at).abs() <= width / 2.0 { 1.0 } else { 0.0 }
    }

    #[test]
    fn rpe_on_single_plane() {
        let v = build(20, 20, 100, |_, _, d| 0.1 + 4.0 * plane(d, 200.0, 6.0));
        let (s, f) = segment_rpe(&v, &proto(20, 20), 500.0).unwrap();
        assert!(f.data.iter().all(|&x| x == 0));
        assert!(s.data.iter().all(|&z| (z as f64 - 200.0).abs() <= DZ));
    }

    #[test]
    fn rpe_prefers_brighter_lower_plane() {
        let v = build(20, 20, 100, |_, _, d| plane(d, 100.0, 6.0) + 3.0 * plane(d, 180.0, 6.0));
        let (s, _) = segment_rpe(&v, &proto(20, 20), 500.0).unwrap();
        assert!(s.data.iter().all(|&z| (z as f64 - 180.0).abs() <= DZ));
    }

    #[test]
    fn rpe_tilted_plane_slope() {
        let p = proto(30, 60);
        let slope = 0.5;
        let v = build(30, 60, 150, |_, x, d| 0.1 + 4.0 * plane(d, 150.0 + slope * x as f64 * 6.7, 6.0));
        let (s, _) = segment_rpe(&v, &p, 500.0).unwrap();
        let (a, b) = (*s.get(15, 15), *s.get(15, 45));
        let got = (b - a) as f64 / (30.0 * 6.7);
        assert!((got - slope).abs() < 0.02 * slope, "slope {got}");
    }

    #[test]
    fn no_signal_is_an_error() {
        let v = Volume::filled(4, 4, 20, 0.0f32);
        assert!(segment_rpe(&v, &proto(4, 4), 500.0).is_err());
    }

    #[test]
    fn flatten_identity_ramp_and_inverse() {
        let v = build(6, 8, 80, |_, x, d| plane(d, 100.0 + 5.4 * x as f64, 3.0));
        let flat_s = Grid::filled(6, 8, 100.0f32);
        let f = flatten(&v, &flat_s, 100.0, DZ).unwrap();
        assert_eq!(f.volume, v);

        let ramp = Grid::from_vec(6, 8, (0..48).map(|i| 100.0 + 5.4 * (i % 8) as f32).collect()).unwrap();
        let f = flatten(&v, &ramp, 100.0, DZ).unwrap();
        let peaks: Vec<usize> = f
            .volume
            .data
            .chunks(80)
            .map(|c| c.iter().position(|&x| x > 0.5).unwrap())
            .collect();
        assert!(peaks.iter().all(|&p| p == peaks[0]));
        let back = unflatten(&f);
        for (i, col) in back.data.chunks(80).enumerate() {
            let s = f.shift.data[i].unsigned_abs() as usize;
            let orig = &v.data[i * 80..(i + 1) * 80];
            assert_eq!(&col[s..80 - s], &orig[s..80 - s]);
        }
    }

    #[test]
    fn flatten_clamps_and_flags() {
        let v = Volume::filled(2, 2, 10, 1.0f32);
        let s = Grid::filled(2, 2, 0.0f32);
        let f = flatten(&v, &s, 1000.0, DZ).unwrap();
        assert!(f.flagged.data.iter().all(|&x| x == 1));
    }

    /// RPE plane at 250 µm with ILM, RNFL posterior and INL center at
    /// 130, 80 and 50 µm above it.
    fn retina(d: f64) -> f32 {
        let rpe = 250.0;
        let (ilm, rnfl, inl) = (rpe - 130.0, rpe - 80.0, rpe - 50.0);
        if d < ilm {
            0.05
        } else if d < rnfl {
            1.5
        } else if (d - inl).abs() < 12.0 {
            0.3 + 0.02 * ((d - inl) / 6.0).powi(2) as f32
        } else if (d - rpe).abs() < 6.0 {
            3.0
        } else {
            0.7
        }
    }

    #[test]
    fn inner_layers_on_layered_volume() {
        let p = proto(24, 24);
        let v = build(24, 24, 120, |_, _, d| retina(d));
        let r = segment_layers(&v, &p, &LayerConfig::default(), &[]).unwrap();
        let s = &r.surfaces;
        let near = |g: &Grid<f32>, want: f64| g.data.iter().all(|&z| (z as f64 - want).abs() <= DZ);
        assert!(near(&s.rpe, 250.0));
        assert!(near(&s.ilm, 120.0), "ilm {:?}", &s.ilm.data[..3]);
        assert!(near(&s.rnfl_posterior, 170.0), "rnfl {:?}", &s.rnfl_posterior.data[..3]);
        assert!(near(&s.inl_center, 200.0), "inl {:?}", &s.inl_center.data[..3]);
        assert!(s.ordering_violations().is_empty());
        assert!(s.flagged.data.iter().all(|&f| f == 0));
    }

    #[test]
    fn uniform_volume_is_flagged() {
        let p = proto(8, 8);
        let v = Volume::filled(8, 8, 80, 1.0f32);
        let inner = segment_inner_layers(&v, 180.0, &p, &LayerConfig::default(), &[]).unwrap();
        assert!(inner.flagged.data.iter().all(|&f| f == 1));
        let r = segment_layers(&v, &p, &LayerConfig::default(), &[]).unwrap();
        assert!(r.surfaces.flagged.data.iter().all(|&f| f == 1));
        assert!(r.surfaces.ordering_violations().is_empty());
    }

    #[test]
    fn overrides_are_respected_exactly() {
        let p = proto(24, 24);
        let v = build(24, 24, 120, |_, _, d| retina(d));
        let pins = vec![
            Override { x: 3, y: 4, layer: Surface::Ilm, depth_um: 111.5, snap: false },
            Override { x: 20, y: 10, layer: Surface::Ilm, depth_um: 127.25, snap: false },
        ];
        let r = segment_layers(&v, &p, &LayerConfig::default(), &pins).unwrap();
        for o in &pins {
            assert_eq!(*r.surfaces.ilm.get(o.y, o.x), o.depth_um as f32);
        }
    }

    #[test]
    fn snapped_override_finds_nearby_feature() {
        let v = build(1, 1, 120, |_, _, d| retina(d));
        let pre = transverse_smooth(&axial_smooth(&v, 1.0), [1, 1, 120]);
        let grad: Vec<f32> = pre.windows(2).map(|w| w[1] - w[0]).collect();
        let d = snap_feature(&pre, &grad, Surface::Ilm, 112.0, 15.0, DZ).unwrap();
        assert!((d as f64 - 120.0).abs() <= DZ);
    }

    #[test]
    fn overrides_parse_from_toml() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("o.toml");
        std::fs::write(&path, "[[override]]\nx = 1\ny = 2\nlayer = \"ilm\"\ndepth_um = 40.0\n").unwrap();
        let o = load_overrides(&path).unwrap();
        assert_eq!(o.len(), 1);
        assert_eq!(o[0].layer, Surface::Ilm);
        assert!(!o[0].snap);
    }

    #[test]
    fn fine_rpe_double_peak() {
        let p = proto(10, 10);
        let z0 = 200.0;
        let v = build(10, 10, 100, |_, _, d| {
            let g = |c: f64| (-(d - c).powi(2) / (2.0 * 1.5f64.powi(2))).exp() as f32;
            0.1 + 2.0 * g(z0) + 1.5 * g(z0 + 8.0)
        });
        let (f, flags) = refine_rpe(&v, z0, &p, &LayerConfig::default()).unwrap();
        assert!(flags.data.iter().all(|&x| x == 0));
        assert!(f.data.iter().all(|&z| (z as f64 - (z0 + 8.0)).abs() <= DZ));

        let single = build(10, 10, 100, |_, _, d| 0.1 + plane(d, z0, 2.0) * 2.0);
        let (f, _) = refine_rpe(&single, z0, &p, &LayerConfig::default()).unwrap();
        assert!(f.data.iter().all(|&z| (z as f64 - z0).abs() <= DZ));
    }

    #[test]
    fn fine_rpe_falls_back_without_peak() {
        let p = proto(4, 4);
        let v = Volume::filled(4, 4, 100, 1.0f32);
        let (f, flags) = refine_rpe(&v, 150.0, &p, &LayerConfig::default()).unwrap();
        assert!(flags.data.iter().all(|&x| x == 1));
        assert!(f.data.iter().all(|&z| z == 150.0));
    }

    #[test]
    fn order_is_enforced() {
        let g = |v: f32| Grid::filled(1, 2, v);
        let (mut a, mut b, mut c, mut d) = (g(100.0), g(90.0), g(f32::NAN), g(200.0));
        let mut fl = Grid::filled(1, 2, 0u8);
        enforce_order(&mut a, &mut b, &mut c, &mut d, &mut fl, 2.7, 300.0);
        assert!(a.data[0] < b.data[0] && b.data[0] < c.data[0] && c.data[0] < d.data[0]);
        assert_eq!(fl.data, vec![1, 1]);
    }
}
