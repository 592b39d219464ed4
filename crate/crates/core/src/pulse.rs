//! Cardiac pulsatility: sliding-band α, representative pulsatility and
//! compensation of α maps.

use crate::fit::{fit_voxels, DecayFit, FitBounds};
use crate::par::*;
use crate::protocol::ScanProtocol;
use crate::vessels::{connected_components_3d, mask_3d, VesselGraph};
use crate::volume::{Grid, OctaStack, Volume};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PulseConfig {
    pub window_ms: f64,
    /// Bands whose fit residual exceeds this multiple of the median residual
    /// are replaced by interpolation.
    pub outlier_factor: f64,
    pub n_min: usize,
    /// Compile every voxel in the band instead of only vessel voxels.
    pub all_voxels: bool,
}

impl Default for PulseConfig {
    fn default() -> Self {
        PulseConfig {
            window_ms: 100.0,
            outlier_factor: 3.0,
            n_min: 10,
            all_voxels: false,
        }
    }
}

/// Band width in slow positions: `round(window / (N·Δt))`, at least 1.
pub fn band_width(protocol: &ScanProtocol, window_ms: f64) -> Result<usize> {
    if !(window_ms > 0.0) {
        return Err(Error::invalid("pulsatility window must be positive"));
    }
    let w = (window_ms / protocol.slow_period_ms()).round() as usize;
    Ok(w.max(1))
}

/// Representative pulsatility along the slow axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseTrace {
    pub width: usize,
    pub window_ms: f64,
    /// Slow index of each band center (every position).
    pub y: Vec<usize>,
    pub t_ms: Vec<f64>,
    /// Fitted (or interpolated/extended) band α, ms⁻¹.
    pub alpha_band: Vec<f64>,
    pub g_rep: Vec<f64>,
    /// 0 ok, 1 outlier interpolated, 2 edge extension, 3 unusable fit.
    pub flag: Vec<u8>,
    pub fits: Vec<Option<DecayFit>>,
}

impl PulseTrace {
    /// Mean of the band α over all positions (`α₀^compiled`).
    pub fn alpha_compiled(&self) -> f64 {
        self.alpha_band.iter().sum::<f64>() / self.alpha_band.len() as f64
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
        let io = |e: csv::Error| Error::io(path, e.into());
        w.write_record(["y_n", "t_ms", "alpha_band", "g_rep", "flag"]).map_err(io)?;
        for i in 0..self.y.len() {
            w.write_record([
                self.y[i].to_string(),
                format!("{:.3}", self.t_ms[i]),
                format!("{:.6}", self.alpha_band[i]),
                format!("{:.6}", self.g_rep[i]),
                self.flag[i].to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn rows_of_band(y: usize, w: usize, ny: usize) -> Option<(usize, usize)> {
    let lo = y.checked_sub(w / 2)?;
    (lo + w <= ny).then_some((lo, lo + w))
}

/// Fits `select`ed voxels within each full band, then cleans and extends.
fn sliding_trace(
    stack: &OctaStack,
    select: &(dyn Fn(usize) -> bool + Sync),
    cfg: &PulseConfig,
    bounds: &FitBounds,
) -> Result<PulseTrace> {
    let (ny, nx, nz) = stack.dims();
    let w = band_width(&stack.protocol, cfg.window_ms)?;
    if w > ny {
        return Err(Error::invalid(format!("band width {w} exceeds {ny} slow positions")));
    }
    let plane = nx * nz;
    let dt = stack.protocol.dt_fundamental_ms;
    let rows: Vec<Vec<usize>> = (0..ny)
        .into_par_iter()
        .map(|y| (y * plane..(y + 1) * plane).filter(|&i| select(i)).collect())
        .collect();
    if rows.iter().all(|r| r.is_empty()) {
        return Err(Error::invalid("no vessel voxels to compile"));
    }
    let fits: Vec<Option<DecayFit>> = (0..ny)
        .into_par_iter()
        .map(|y| {
            let (lo, hi) = rows_of_band(y, w, ny)?;
            let vox: Vec<usize> = rows[lo..hi].concat();
            Some(fit_voxels(&vox, &stack.normalized, dt, cfg.n_min, bounds))
        })
        .collect();
    clean_trace(fits, w, cfg, &stack.protocol)
}

fn clean_trace(fits: Vec<Option<DecayFit>>, w: usize, cfg: &PulseConfig, protocol: &ScanProtocol) -> Result<PulseTrace> {
    let ny = fits.len();
    let mut alpha = vec![f64::NAN; ny];
    let mut flag = vec![2u8; ny];
    let mut residuals = Vec::new();
    for (y, f) in fits.iter().enumerate() {
        if let Some(f) = f {
            if f.is_usable() && f.alpha.is_finite() {
                alpha[y] = f.alpha;
                flag[y] = 0;
                residuals.push(f.residual as f32);
            } else {
                flag[y] = 3;
            }
        }
    }
    let med = crate::filters::median_in_place(&mut residuals) as f64;
    if med > 0.0 {
        for (y, f) in fits.iter().enumerate() {
            if let Some(f) = f {
                if flag[y] == 0 && f.residual > cfg.outlier_factor * med {
                    alpha[y] = f64::NAN;
                    flag[y] = 1;
                }
            }
        }
    }
    let good: Vec<usize> = (0..ny).filter(|&y| flag[y] == 0).collect();
    if good.is_empty() {
        return Err(Error::invalid("no usable band fits"));
    }
    for y in 0..ny {
        if flag[y] == 0 {
            continue;
        }
        let after = good.partition_point(|&g| g < y);
        alpha[y] = match (after.checked_sub(1).map(|i| good[i]), good.get(after)) {
            (Some(a), Some(&b)) if flag[y] != 2 => {
                let t = (y - a) as f64 / (b - a) as f64;
                alpha[a] * (1.0 - t) + alpha[b] * t
            }
            (Some(a), Some(&b)) => {
                if y - a <= b - y {
                    alpha[a]
                } else {
                    alpha[b]
                }
            }
            (Some(a), None) => alpha[a],
            (None, Some(&b)) => alpha[b],
            (None, None) => unreachable!(),
        };
    }
    let mean = alpha.iter().sum::<f64>() / ny as f64;
    let g_rep = alpha.iter().map(|a| a / mean - 1.0).collect();
    let period = protocol.slow_period_ms();
    Ok(PulseTrace {
        width: w,
        window_ms: cfg.window_ms,
        y: (0..ny).collect(),
        t_ms: (0..ny).map(|y| y as f64 * period).collect(),
        alpha_band: alpha,
        g_rep,
        flag,
        fits,
    })
}

/// Sliding-band representative pulsatility over vessel voxels (`ids > 0`),
/// or over every voxel with `cfg.all_voxels`.
pub fn band_pulsatility(ids: &Volume<u32>, stack: &OctaStack, cfg: &PulseConfig, bounds: &FitBounds) -> Result<PulseTrace> {
    if ids.dims() != stack.dims() {
        return Err(Error::shape("id volume and OCTA stack differ in size"));
    }
    if cfg.all_voxels {
        sliding_trace(stack, &|_| true, cfg, bounds)
    } else {
        sliding_trace(stack, &|i| ids.data[i] != 0, cfg, bounds)
    }
}

/// `α / (1 + g_rep(y))` per pixel. Rows where `1 + g ≤ 0` are left
/// uncompensated and reported.
pub fn compensate(alpha: &Grid<f32>, g_rep: &[f64]) -> Result<(Grid<f32>, Vec<usize>)> {
    if g_rep.len() != alpha.ny {
        return Err(Error::shape(format!("g_rep has {} rows, map has {}", g_rep.len(), alpha.ny)));
    }
    let mut out = alpha.clone();
    let mut bad = Vec::new();
    for (y, &g) in g_rep.iter().enumerate() {
        if 1.0 + g <= 0.0 {
            bad.push(y);
            continue;
        }
        for v in &mut out.data[y * alpha.nx..(y + 1) * alpha.nx] {
            *v = (*v as f64 / (1.0 + g)) as f32;
        }
    }
    Ok((out, bad))
}

/// Mean of a per-pixel map over each link's skeleton pixels (finite values
/// only), keyed by segment ID.
pub fn segment_means(map: &Grid<f32>, graph: &VesselGraph) -> BTreeMap<u32, f64> {
    let mut out = BTreeMap::new();
    for l in &graph.links {
        let vals: Vec<f64> = l
            .pixels
            .iter()
            .map(|&(y, x)| *map.get(y, x) as f64)
            .filter(|v| v.is_finite())
            .collect();
        if !vals.is_empty() {
            out.insert(l.id, vals.iter().sum::<f64>() / vals.len() as f64);
        }
    }
    out
}

/// Pearson correlation; NaN if either series is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n < 2 {
        return f64::NAN;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (da, db) = (a[i] - ma, b[i] - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    sab / (saa * sbb).sqrt()
}

pub fn pearson_matrix(series: &[Vec<f64>]) -> Vec<Vec<f64>> {
    series
        .iter()
        .map(|a| series.iter().map(|b| pearson(a, b)).collect())
        .collect()
}

/// α(t) and g(t) of one tracked vessel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSeries {
    pub label: u32,
    pub n_voxels: usize,
    pub alpha: Vec<f64>,
    pub g: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmodeResult {
    pub tracks: Vec<TrackSeries>,
    pub compiled: PulseTrace,
    /// Correlation matrix of every track's g and, last, `g_rep`.
    pub pearson: Vec<Vec<f64>>,
    /// Mean correlation of the individual g with `g_rep`.
    pub mean_correlation: f64,
}

/// Repeated-B-scan (M-mode) analysis: the slow axis is time at a single
/// location. Vessel cross sections are tracked as 3D components of the
/// Otsu mask of mean unnormalized OCTA; each track and the compiled set
/// get a sliding-window α(t).
pub fn mmode_alpha_series(stack: &OctaStack, cfg: &PulseConfig, bounds: &FitBounds) -> Result<MmodeResult> {
    let (ny, _, _) = stack.dims();
    let w = band_width(&stack.protocol, cfg.window_ms)?;
    if cfg.window_ms < stack.protocol.slow_period_ms() {
        return Err(Error::invalid("window is shorter than one repeat cycle"));
    }
    let (mask, _) = mask_3d(&stack.mean_unnormalized());
    let (labels, _) = connected_components_3d(&mask);
    let compiled = sliding_trace(stack, &|i| labels.data[i] != 0, cfg, bounds)?;

    let mut by_label: BTreeMap<u32, usize> = BTreeMap::new();
    for &l in labels.data.iter().filter(|&&l| l != 0) {
        *by_label.entry(l).or_default() += 1;
    }
    let tracks: Vec<TrackSeries> = by_label
        .into_iter()
        .filter_map(|(label, n)| {
            let t = sliding_trace(stack, &|i| labels.data[i] == label, cfg, bounds).ok()?;
            // Only tracks with a usable fit in every full band.
            let full = (0..ny).filter(|&y| rows_of_band(y, w, ny).is_some());
            if full.clone().any(|y| t.flag[y] != 0) {
                return None;
            }
            Some(TrackSeries {
                label,
                n_voxels: n,
                alpha: t.alpha_band,
                g: t.g_rep,
            })
        })
        .collect();
    let mut series: Vec<Vec<f64>> = tracks.iter().map(|t| t.g.clone()).collect();
    series.push(compiled.g_rep.clone());
    let pearson = pearson_matrix(&series);
    let k = tracks.len();
    let mean_correlation = if k == 0 {
        f64::NAN
    } else {
        (0..k).map(|i| pearson[i][k]).sum::<f64>() / k as f64
    };
    Ok(MmodeResult {
        tracks,
        compiled,
        pearson,
        mean_correlation,
    })
}
