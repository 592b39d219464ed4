//! Synthetic repeated-B-scan OCT volumes with known decay constants.
//!
//! Each voxel's complex signal is `S(t) = S_static + S_dyn(t) + n(t)`. Inside
//! a vessel or cuboid, `S_dyn` is a unit-variance complex Ornstein–Uhlenbeck
//! process whose rate is `α₀(1 + g(t))`, sampled at the raster acquisition
//! times. Static tissue comes from planar layers. The optional PSF blurs each
//! B-scan in `(x, z)` before noise is added.

mod presets;
mod waveform;

pub use presets::{capillary_rows, retina_layers, CapillaryLayout};
pub use waveform::{gamma_mean, pulsatility_waveform, waveform, PulseKind, GAMMA_RISE_FRACTION};

use crate::container;
use crate::par::*;
use crate::protocol::ScanProtocol;
use crate::rng::{complex_normal, stream, Purpose};
use crate::volume::{OctVolume, SampleKind, Samples, Volume};
use crate::{Error, Result};
use num_complex::{Complex32, Complex64};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// A tube around a polyline centerline. Coordinates are `(x, y, z)` in µm
/// from the volume origin (voxel centers sit at `index × spacing`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VesselSpec {
    pub centerline: Vec<[f64; 3]>,
    pub radius_um: f64,
    /// Ground-truth decay constant in ms⁻¹.
    pub alpha0: f64,
    /// Dynamic share of the in-vessel signal power, σ_d² / (s² + σ_d²).
    #[serde(default = "default_fraction")]
    pub dynamic_fraction: f64,
}

/// An axis-aligned dynamic block (choroid-like flow).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CuboidSpec {
    pub min_um: [f64; 3],
    pub max_um: [f64; 3],
    pub alpha0: f64,
    #[serde(default = "default_fraction")]
    pub dynamic_fraction: f64,
}

fn default_fraction() -> f64 {
    0.5
}

/// A static reflective layer occupying `[depth, depth + thickness)` at the
/// origin, tilted by `tilt_x`/`tilt_y` µm of depth per µm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(default)]
    pub name: String,
    pub depth_um: f64,
    pub thickness_um: f64,
    pub reflectivity: f64,
    #[serde(default)]
    pub tilt_x: f64,
    #[serde(default)]
    pub tilt_y: f64,
}

impl LayerSpec {
    pub fn top_at(&self, x_um: f64, y_um: f64) -> f64 {
        self.depth_um + self.tilt_x * x_um + self.tilt_y * y_um
    }

    fn contains(&self, x_um: f64, y_um: f64, z_um: f64) -> bool {
        let top = self.top_at(x_um, y_um);
        z_um >= top && z_um < top + self.thickness_um
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TissueSpec {
    /// Static amplitude everywhere outside vessels, added to the layers.
    pub background: f64,
    /// Multiply static amplitudes by a fixed complex Gaussian speckle pattern.
    pub speckle: bool,
}

impl Default for TissueSpec {
    fn default() -> Self {
        TissueSpec {
            background: 0.0,
            speckle: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PsfSpec {
    pub transverse_sigma_um: f64,
    pub axial_sigma_um: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PulsatilitySpec {
    pub kind: PulseKind,
    pub rate_hz: f64,
    pub magnitude: f64,
    /// Common phase offset in ms.
    pub phase_ms: f64,
    /// Per-segment phase offsets are drawn uniformly in ±`phase_jitter_ms`.
    pub phase_jitter_ms: f64,
    /// Per-segment magnitude scale is drawn uniformly in 1 ± this value.
    pub magnitude_jitter: f64,
}

impl Default for PulsatilitySpec {
    fn default() -> Self {
        PulsatilitySpec {
            kind: PulseKind::None,
            rate_hz: 1.0,
            magnitude: 0.0,
            phase_ms: 0.0,
            phase_jitter_ms: 0.0,
            magnitude_jitter: 0.0,
        }
    }
}

/// Rigid content shift of one B-scan, in pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BscanShift {
    pub y: usize,
    pub dx_px: i64,
    pub dz_px: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub protocol: ScanProtocol,
    /// Imaging depth in µm; `nz = round(depth / axial spacing)`.
    pub depth_um: f64,
    #[serde(default)]
    pub vessels: Vec<VesselSpec>,
    #[serde(default)]
    pub cuboids: Vec<CuboidSpec>,
    #[serde(default)]
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub tissue: TissueSpec,
    /// Mean signal power `s² + σ_d²` inside vessels and cuboids.
    #[serde(default = "default_power")]
    pub vessel_power: f64,
    #[serde(default)]
    pub psf: PsfSpec,
    /// Standard deviation of the complex noise, `E|n|² = σ²`.
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub pulsatility: PulsatilitySpec,
    /// Correlation of the dynamic signal between bands (0 = independent).
    #[serde(default)]
    pub band_correlation: f64,
    #[serde(default)]
    pub motion: Vec<BscanShift>,
    #[serde(default = "default_output")]
    pub output: SampleKind,
    #[serde(default)]
    pub seed: u64,
}

fn default_power() -> f64 {
    2.0
}

fn default_output() -> SampleKind {
    SampleKind::Amplitude
}

impl PhantomSpec {
    /// Empty phantom (no structure) with default settings.
    pub fn new(protocol: ScanProtocol, depth_um: f64, seed: u64) -> Self {
        PhantomSpec {
            protocol,
            depth_um,
            vessels: Vec::new(),
            cuboids: Vec::new(),
            layers: Vec::new(),
            tissue: TissueSpec::default(),
            vessel_power: default_power(),
            psf: PsfSpec::default(),
            noise_sigma: 0.0,
            pulsatility: PulsatilitySpec::default(),
            band_correlation: 0.0,
            motion: Vec::new(),
            output: SampleKind::Amplitude,
            seed,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("phantom spec serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        let nz = (self.depth_um / self.protocol.axial_spacing_um).round().max(1.0) as usize;
        (self.protocol.n_bscans, self.protocol.ascans_per_bscan, nz)
    }

    /// Physical extent `(x, y, z)` in µm.
    pub fn extent_um(&self) -> [f64; 3] {
        let (ny, nx, nz) = self.dims();
        [
            nx as f64 * self.protocol.ascan_spacing_um,
            ny as f64 * self.protocol.bscan_spacing_um(),
            nz as f64 * self.protocol.axial_spacing_um,
        ]
    }

    /// Checks every invariant; geometry must lie inside the volume.
    pub fn validate(&self) -> Result<()> {
        self.protocol.ensure_valid()?;
        if !(self.depth_um > 0.0) {
            return Err(Error::invalid("depth_um must be positive"));
        }
        let ext = self.extent_um();
        let inside = |p: &[f64; 3]| (0..3).all(|k| p[k] >= 0.0 && p[k] <= ext[k]);
        for (i, v) in self.vessels.iter().enumerate() {
            if !(v.alpha0 > 0.0) || !(v.radius_um > 0.0) || !(0.0..=1.0).contains(&v.dynamic_fraction) {
                return Err(Error::invalid(format!(
                    "vessel {i}: need alpha0 > 0, radius > 0, dynamic_fraction in [0, 1]"
                )));
            }
            if v.centerline.is_empty() {
                return Err(Error::invalid(format!("vessel {i} has no centerline")));
            }
            if let Some(p) = v.centerline.iter().find(|p| !inside(p)) {
                return Err(Error::invalid(format!(
                    "vessel {i} point {p:?} lies outside the volume {ext:?}"
                )));
            }
        }
        for (i, c) in self.cuboids.iter().enumerate() {
            if !(c.alpha0 > 0.0) || !(0.0..=1.0).contains(&c.dynamic_fraction) {
                return Err(Error::invalid(format!("cuboid {i}: need alpha0 > 0, dynamic_fraction in [0, 1]")));
            }
            if !inside(&c.min_um) || !inside(&c.max_um) || (0..3).any(|k| c.min_um[k] >= c.max_um[k]) {
                return Err(Error::invalid(format!("cuboid {i} lies outside the volume or is empty")));
            }
        }
        let p = &self.pulsatility;
        if p.magnitude < 0.0 || p.phase_jitter_ms < 0.0 || p.magnitude_jitter < 0.0 {
            return Err(Error::invalid("pulsatility magnitude and jitters must be ≥ 0"));
        }
        if !(0.0..=1.0).contains(&self.band_correlation) {
            return Err(Error::invalid("band_correlation must be in [0, 1]"));
        }
        if self.noise_sigma < 0.0 || self.vessel_power < 0.0 {
            return Err(Error::invalid("noise_sigma and vessel_power must be ≥ 0"));
        }
        let (ny, _, _) = self.dims();
        if let Some(m) = self.motion.iter().find(|m| m.y >= ny) {
            return Err(Error::invalid(format!("motion entry for B-scan {} outside volume", m.y)));
        }
        Ok(())
    }
}

/// Truth record for one dynamic domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentTruth {
    pub id: u32,
    pub kind: String,
    pub alpha0: f64,
    pub dynamic_fraction: f64,
    /// Pulsatility phase offset (ms) and magnitude scale of this segment.
    pub phase_ms: f64,
    pub scale: f64,
    pub voxels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomTruth {
    /// Segment ID per voxel (0 = static).
    pub ids: Volume<u32>,
    pub segments: Vec<SegmentTruth>,
    /// Times `y·N·Δt` of each slow position.
    pub times_ms: Vec<f64>,
    /// Injected `g` per segment at each slow position.
    pub g: BTreeMap<u32, Vec<f64>>,
    /// Voxel-weighted mean of the segment `g` at each slow position.
    pub g_rep: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TruthJson {
    segments: Vec<SegmentTruth>,
    times_ms: Vec<f64>,
    g: BTreeMap<u32, Vec<f64>>,
    g_rep: Vec<f64>,
}

impl PhantomTruth {
    pub fn segment(&self, id: u32) -> Option<&SegmentTruth> {
        self.segments.iter().find(|s| s.id == id)
    }

    /// Sidecar paths next to a volume path: `<stem>.truth.json`, `<stem>.ids.vvol`.
    pub fn sidecar_paths(volume_path: &Path) -> (PathBuf, PathBuf) {
        let stem = volume_path.with_extension("");
        let s = stem.to_string_lossy();
        (PathBuf::from(format!("{s}.truth.json")), PathBuf::from(format!("{s}.ids.vvol")))
    }

    pub fn write(&self, volume_path: &Path, protocol: &ScanProtocol) -> Result<()> {
        let (json, ids) = Self::sidecar_paths(volume_path);
        let body = TruthJson {
            segments: self.segments.clone(),
            times_ms: self.times_ms.clone(),
            g: self.g.clone(),
            g_rep: self.g_rep.clone(),
        };
        let text = serde_json::to_string_pretty(&body).map_err(|e| Error::invalid(e.to_string()))?;
        std::fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
        container::write_ids(&ids, &self.ids, Some(protocol))
    }

    pub fn read(volume_path: &Path) -> Result<Self> {
        let (json, ids) = Self::sidecar_paths(volume_path);
        let text = std::fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
        let body: TruthJson = serde_json::from_str(&text).map_err(|e| Error::Header(e.to_string()))?;
        let (ids, _) = container::read_ids(&ids)?;
        Ok(PhantomTruth {
            ids,
            segments: body.segments,
            times_ms: body.times_ms,
            g: body.g,
            g_rep: body.g_rep,
        })
    }
}

/// Stationary unit-power complex OU series with constant rate.
pub fn ou_series(alpha: f64, dt: f64, n: usize, seed: u64) -> Vec<Complex64> {
    let mut rng = stream(seed, 0, Purpose::Dynamic, 0);
    ou_series_varying(&vec![alpha; n.saturating_sub(1)], dt, &mut rng)
}

/// OU series whose step `k → k+1` uses rate `rates[k]`; length `rates.len() + 1`.
pub fn ou_series_varying(rates: &[f64], dt: f64, rng: &mut impl Rng) -> Vec<Complex64> {
    let mut x = complex_normal(rng);
    let mut out = Vec::with_capacity(rates.len() + 1);
    out.push(x);
    for &a in rates {
        let rho = (-a.max(0.0) * dt).exp();
        x = rho * x + (1.0 - rho * rho).max(0.0).sqrt() * complex_normal(rng);
        out.push(x);
    }
    out
}

fn point_segment_dist2(p: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let ap = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
    let l2 = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
    let t = if l2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / l2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (0..3).map(|k| (ap[k] - t * ab[k]).powi(2)).sum()
}

/// Rasterizes vessel and cuboid domains; vessels take precedence, lower IDs
/// win overlaps.
pub fn label_geometry(spec: &PhantomSpec) -> Volume<u32> {
    let (ny, nx, nz) = spec.dims();
    let dx = spec.protocol.ascan_spacing_um;
    let dy = spec.protocol.bscan_spacing_um();
    let dz = spec.protocol.axial_spacing_um;
    let boxes: Vec<([f64; 3], [f64; 3])> = spec
        .vessels
        .iter()
        .map(|v| {
            let mut lo = [f64::INFINITY; 3];
            let mut hi = [f64::NEG_INFINITY; 3];
            for p in &v.centerline {
                for k in 0..3 {
                    lo[k] = lo[k].min(p[k] - v.radius_um);
                    hi[k] = hi[k].max(p[k] + v.radius_um);
                }
            }
            (lo, hi)
        })
        .collect();
    let nv = spec.vessels.len() as u32;
    let mut data = vec![0u32; ny * nx * nz];
    data.par_chunks_mut(nx * nz).enumerate().for_each(|(y, chunk)| {
        let py = y as f64 * dy;
        for x in 0..nx {
            let px = x as f64 * dx;
            for z in 0..nz {
                let p = [px, py, z as f64 * dz];
                let mut id = 0;
                for (i, v) in spec.vessels.iter().enumerate() {
                    let (lo, hi) = boxes[i];
                    if (0..3).any(|k| p[k] < lo[k] || p[k] > hi[k]) {
                        continue;
                    }
                    let r2 = v.radius_um * v.radius_um;
                    let hit = if v.centerline.len() == 1 {
                        point_segment_dist2(p, v.centerline[0], v.centerline[0]) <= r2
                    } else {
                        v.centerline.windows(2).any(|w| point_segment_dist2(p, w[0], w[1]) <= r2)
                    };
                    if hit {
                        id = i as u32 + 1;
                        break;
                    }
                }
                if id == 0 {
                    for (i, c) in spec.cuboids.iter().enumerate() {
                        if (0..3).all(|k| p[k] >= c.min_um[k] && p[k] < c.max_um[k]) {
                            id = nv + i as u32 + 1;
                            break;
                        }
                    }
                }
                chunk[x * nz + z] = id;
            }
        }
    });
    Volume { ny, nx, nz, data }
}

struct Domain {
    alpha0: f64,
    static_amp: f64,
    dyn_amp: f64,
    phase_ms: f64,
    scale: f64,
}

fn blur_bscan(buf: &mut [Complex64], nx: usize, nz: usize, sx: f64, sz: f64) {
    let apply = |buf: &mut [Complex64], n: usize, stride: usize, lines: usize, line_step: usize, sigma: f64| {
        if sigma <= 0.0 {
            return;
        }
        let taps = crate::filters::gaussian_kernel(sigma, 0);
        let r = (taps.len() / 2) as isize;
        let mut tmp = vec![Complex64::default(); n];
        for l in 0..lines {
            let base = l * line_step;
            for (k, out) in tmp.iter_mut().enumerate() {
                let mut acc = Complex64::default();
                for (t, &w) in taps.iter().enumerate() {
                    let j = k as isize + t as isize - r;
                    if j >= 0 && (j as usize) < n {
                        acc += w * buf[base + j as usize * stride];
                    }
                }
                *out = acc;
            }
            for k in 0..n {
                buf[base + k * stride] = tmp[k];
            }
        }
    };
    apply(buf, nz, 1, nx, nz, sz);
    apply(buf, nx, nz, nz, 1, sx);
}

/// Generates the OCT volume and its ground truth. Deterministic in the seed,
/// independent of the worker count.
pub fn build_phantom(spec: &PhantomSpec) -> Result<(OctVolume, PhantomTruth)> {
    spec.validate()?;
    let (ny, nx, nz) = spec.dims();
    let p = &spec.protocol;
    let (l, n) = (p.n_bands, p.n_repeats);
    let dt = p.dt_fundamental_ms;
    let dx = p.ascan_spacing_um;
    let dy = p.bscan_spacing_um();
    let dz = p.axial_spacing_um;
    let ids = label_geometry(spec);

    let pulse = &spec.pulsatility;
    let mut domains: Vec<Domain> = Vec::new();
    let mut add = |alpha0: f64, frac: f64, id: u32| {
        let mut r = stream(spec.seed, id as u64, Purpose::Segment, 0);
        let u1: f64 = r.random_range(-1.0..=1.0);
        let u2: f64 = r.random_range(-1.0..=1.0);
        domains.push(Domain {
            alpha0,
            static_amp: (spec.vessel_power * (1.0 - frac)).sqrt(),
            dyn_amp: (spec.vessel_power * frac).sqrt(),
            phase_ms: pulse.phase_ms + pulse.phase_jitter_ms * u1,
            scale: (1.0 + pulse.magnitude_jitter * u2).max(0.0),
        });
    };
    for (i, v) in spec.vessels.iter().enumerate() {
        add(v.alpha0, v.dynamic_fraction, i as u32 + 1);
    }
    let nv = spec.vessels.len();
    for (i, c) in spec.cuboids.iter().enumerate() {
        add(c.alpha0, c.dynamic_fraction, (nv + i) as u32 + 1);
    }
    let g_at = |d: &Domain, t: f64| waveform(pulse.kind, pulse.rate_hz, pulse.magnitude * d.scale, t + d.phase_ms);

    let bs = nx * nz;
    let shift_of = |y: usize| {
        spec.motion
            .iter()
            .rev()
            .find(|m| m.y == y)
            .map(|m| (m.dx_px, m.dz_px))
            .unwrap_or((0, 0))
    };
    let c = spec.band_correlation;
    let (wc, wi) = (c.sqrt(), (1.0 - c).sqrt());
    let sx = spec.psf.transverse_sigma_um / dx;
    let sz = spec.psf.axial_sigma_um / dz;

    let per_y: Vec<Vec<Complex32>> = (0..ny)
        .into_par_iter()
        .map(|y| {
            let py = y as f64 * dy;
            // field[(band * n + j) * bs + x * nz + z]
            let mut field = vec![Complex64::default(); l * n * bs];
            for x in 0..nx {
                let px = x as f64 * dx;
                for z in 0..nz {
                    let k = x * nz + z;
                    let voxel = ((y * nx + x) * nz + z) as u64;
                    let id = ids.data[voxel as usize];
                    let pz = z as f64 * dz;
                    let mut static_amp = spec.tissue.background;
                    let mut dom = None;
                    if id > 0 {
                        let d = &domains[id as usize - 1];
                        static_amp = d.static_amp;
                        dom = Some(d);
                    } else {
                        for layer in &spec.layers {
                            if layer.contains(px, py, pz) {
                                static_amp += layer.reflectivity;
                            }
                        }
                    }
                    let rates: Vec<f64> = match dom {
                        Some(d) => (0..n.saturating_sub(1))
                            .map(|j| d.alpha0 * (1.0 + g_at(d, p.acquisition_time_ms(y, j))))
                            .collect(),
                        None => Vec::new(),
                    };
                    let shared = match dom {
                        Some(_) if c > 0.0 => {
                            let mut r = stream(spec.seed, voxel, Purpose::SharedDynamic, 0);
                            Some(ou_series_varying(&rates, dt, &mut r))
                        }
                        _ => None,
                    };
                    for band in 0..l {
                        let s0 = if spec.tissue.speckle && static_amp != 0.0 {
                            let mut r = stream(spec.seed, voxel, Purpose::Speckle, band as u32);
                            static_amp * complex_normal(&mut r)
                        } else {
                            Complex64::new(static_amp, 0.0)
                        };
                        let dynamic = match dom {
                            Some(d) if d.dyn_amp > 0.0 => {
                                let mut r = stream(spec.seed, voxel, Purpose::Dynamic, band as u32);
                                let own = ou_series_varying(&rates, dt, &mut r);
                                Some((d.dyn_amp, own))
                            }
                            _ => None,
                        };
                        for j in 0..n {
                            let mut v = s0;
                            if let Some((amp, own)) = &dynamic {
                                let mut dynv = own[j] * wi;
                                if let Some(sh) = &shared {
                                    dynv += sh[j] * wc;
                                }
                                v += *amp * dynv;
                            }
                            field[(band * n + j) * bs + k] = v;
                        }
                    }
                }
            }
            let (mx, mz) = shift_of(y);
            for frame in field.chunks_mut(bs) {
                blur_bscan(frame, nx, nz, sx, sz);
                if mx != 0 || mz != 0 {
                    let src = frame.to_vec();
                    for x in 0..nx as i64 {
                        for z in 0..nz as i64 {
                            let (ox, oz) = (x - mx, z - mz);
                            frame[(x * nz as i64 + z) as usize] =
                                if ox >= 0 && oz >= 0 && ox < nx as i64 && oz < nz as i64 {
                                    src[(ox * nz as i64 + oz) as usize]
                                } else {
                                    Complex64::default()
                                };
                        }
                    }
                }
            }
            if spec.noise_sigma > 0.0 {
                for k in 0..bs {
                    let voxel = (y * bs + k) as u64;
                    for band in 0..l {
                        let mut r = stream(spec.seed, voxel, Purpose::Noise, band as u32);
                        for j in 0..n {
                            field[(band * n + j) * bs + k] += spec.noise_sigma * complex_normal(&mut r);
                        }
                    }
                }
            }
            field.iter().map(|c| Complex32::new(c.re as f32, c.im as f32)).collect()
        })
        .collect();

    let frame = ny * bs;
    let samples = match spec.output {
        SampleKind::Complex => {
            let mut out = vec![Complex32::default(); l * n * frame];
            for (y, chunk) in per_y.iter().enumerate() {
                for f in 0..l * n {
                    out[f * frame + y * bs..f * frame + (y + 1) * bs].copy_from_slice(&chunk[f * bs..(f + 1) * bs]);
                }
            }
            Samples::Complex(out)
        }
        SampleKind::Amplitude => {
            let mut out = vec![0.0f32; l * n * frame];
            for (y, chunk) in per_y.iter().enumerate() {
                for f in 0..l * n {
                    let dst = &mut out[f * frame + y * bs..f * frame + (y + 1) * bs];
                    for (d, s) in dst.iter_mut().zip(&chunk[f * bs..(f + 1) * bs]) {
                        *d = s.norm();
                    }
                }
            }
            Samples::Amplitude(out)
        }
    };
    drop(per_y);
    let vol = OctVolume::new(p.clone(), [l, n, ny, nx, nz], samples)?;

    let mut counts = vec![0usize; domains.len()];
    for &id in &ids.data {
        if id > 0 {
            counts[id as usize - 1] += 1;
        }
    }
    let times_ms: Vec<f64> = (0..ny).map(|y| p.acquisition_time_ms(y, 0)).collect();
    let mut g = BTreeMap::new();
    let mut segments = Vec::new();
    for (i, d) in domains.iter().enumerate() {
        let id = i as u32 + 1;
        let (kind, frac) = if i < nv {
            ("vessel", spec.vessels[i].dynamic_fraction)
        } else {
            ("cuboid", spec.cuboids[i - nv].dynamic_fraction)
        };
        segments.push(SegmentTruth {
            id,
            kind: kind.into(),
            alpha0: d.alpha0,
            dynamic_fraction: frac,
            phase_ms: d.phase_ms,
            scale: d.scale,
            voxels: counts[i],
        });
        g.insert(id, times_ms.iter().map(|&t| g_at(d, t)).collect::<Vec<f64>>());
    }
    let total: usize = counts.iter().sum();
    let g_rep = (0..ny)
        .map(|y| {
            if total == 0 {
                return 0.0;
            }
            g.iter()
                .map(|(id, v)| v[y] * counts[*id as usize - 1] as f64)
                .sum::<f64>()
                / total as f64
        })
        .collect();
    let truth = PhantomTruth {
        ids,
        segments,
        times_ms,
        g,
        g_rep,
    };
    Ok((vol, truth))
}

/// Builds a phantom and writes the volume plus truth sidecars.
pub fn write_phantom(spec: &PhantomSpec, path: impl AsRef<Path>) -> Result<PhantomTruth> {
    let path = path.as_ref();
    let (vol, truth) = build_phantom(spec)?;
    container::write_volume(path, &vol)?;
    truth.write(path, &spec.protocol)?;
    Ok(truth)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_protocol() -> ScanProtocol {
        ScanProtocol {
            fov_mm: (0.2, 0.2),
            ascans_per_bscan: 20,
            n_bscans: 10,
            n_bands: 1,
            ..ScanProtocol::preset_3x3()
        }
    }

    #[test]
    fn ou_zero_rate_is_constant() {
        let s = ou_series(0.0, 1.0, 50, 3);
        assert!(s.iter().all(|v| *v == s[0]));
    }

    #[test]
    fn ou_lag_autocorrelation() {
        let n = 1_000_000;
        let s = ou_series(1.0, 1.0, n, 11);
        let power: f64 = s.iter().map(|v| v.norm_sqr()).sum::<f64>() / n as f64;
        for (lag, want) in [(1usize, (-1.0f64).exp()), (3, (-3.0f64).exp())] {
            let c: Complex64 = (0..n - lag).map(|k| s[k + lag] * s[k].conj()).sum::<Complex64>() / (n - lag) as f64;
            let r = c.re / power;
            assert!((r - want).abs() < 0.01, "lag {lag}: {r} vs {want}");
        }
    }

    #[test]
    fn static_layer_has_zero_octa() {
        let mut spec = PhantomSpec::new(small_protocol(), 60.0, 1);
        spec.layers.push(LayerSpec {
            name: "rpe".into(),
            depth_um: 20.0,
            thickness_um: 10.0,
            reflectivity: 2.0,
            tilt_x: 0.0,
            tilt_y: 0.0,
        });
        let (vol, truth) = build_phantom(&spec).unwrap();
        let stack = crate::octa::octa_stack(&vol, crate::octa::OctaMode::Amplitude).unwrap();
        assert!(stack.normalized.iter().all(|m| m.data.iter().all(|&v| v == 0.0)));
        assert!(truth.segments.is_empty());
    }

    #[test]
    fn geometry_outside_volume_is_rejected() {
        let mut spec = PhantomSpec::new(small_protocol(), 60.0, 1);
        spec.vessels.push(VesselSpec {
            centerline: vec![[10.0, 10.0, 30.0], [500.0, 10.0, 30.0]],
            radius_um: 5.0,
            alpha0: 1.0,
            dynamic_fraction: 1.0,
        });
        assert!(build_phantom(&spec).is_err());
    }

    #[test]
    fn zero_magnitude_gives_zero_truth_g() {
        let mut spec = PhantomSpec::new(small_protocol(), 60.0, 1);
        spec.vessels.push(VesselSpec {
            centerline: vec![[10.0, 40.0, 30.0], [120.0, 40.0, 30.0]],
            radius_um: 8.0,
            alpha0: 1.0,
            dynamic_fraction: 1.0,
        });
        spec.pulsatility.kind = PulseKind::GammaPulse;
        spec.pulsatility.magnitude = 0.0;
        spec.pulsatility.phase_jitter_ms = 100.0;
        let (_, truth) = build_phantom(&spec).unwrap();
        assert!(truth.g[&1].iter().all(|&v| v == 0.0));
        assert!(truth.g_rep.iter().all(|&v| v == 0.0));
        assert!(truth.segments[0].voxels > 0);
    }

    #[test]
    fn deterministic_for_seed() {
        let mut spec = PhantomSpec::new(small_protocol(), 60.0, 9);
        spec.noise_sigma = 0.3;
        spec.vessels.push(VesselSpec {
            centerline: vec![[10.0, 50.0, 30.0], [120.0, 50.0, 30.0]],
            radius_um: 8.0,
            alpha0: 1.0,
            dynamic_fraction: 0.5,
        });
        let (a, _) = build_phantom(&spec).unwrap();
        let (b, _) = build_phantom(&spec).unwrap();
        assert_eq!(a, b);
        spec.seed = 10;
        let (c, _) = build_phantom(&spec).unwrap();
        assert_ne!(a, c);
    }
}
