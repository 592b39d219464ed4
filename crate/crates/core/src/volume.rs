//! In-memory volume types.
//!
//! Voxel order everywhere is slow (`y`), fast (`x`), depth (`z`) with depth
//! varying fastest, so one B-scan is a contiguous `nx * nz` block.

use crate::protocol::ScanProtocol;
use crate::{Error, Result};
use num_complex::Complex32;
use serde::{Deserialize, Serialize};

/// A dense 3D array indexed `[y][x][z]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    pub ny: usize,
    pub nx: usize,
    pub nz: usize,
    pub data: Vec<T>,
}

impl<T: Clone> Volume<T> {
    pub fn filled(ny: usize, nx: usize, nz: usize, value: T) -> Self {
        Volume {
            ny,
            nx,
            nz,
            data: vec![value; ny * nx * nz],
        }
    }
}

impl<T> Volume<T> {
    pub fn from_vec(ny: usize, nx: usize, nz: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != ny * nx * nz {
            return Err(Error::shape(format!(
                "volume {ny}x{nx}x{nz} needs {} samples, got {}",
                ny * nx * nz,
                data.len()
            )));
        }
        Ok(Volume { ny, nx, nz, data })
    }

    #[inline]
    pub fn idx(&self, y: usize, x: usize, z: usize) -> usize {
        (y * self.nx + x) * self.nz + z
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, z: usize) -> &T {
        &self.data[self.idx(y, x, z)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, z: usize, v: T) {
        let i = self.idx(y, x, z);
        self.data[i] = v;
    }

    /// Inverse of [`Volume::idx`].
    #[inline]
    pub fn coords(&self, i: usize) -> (usize, usize, usize) {
        let z = i % self.nz;
        let r = i / self.nz;
        (r / self.nx, r % self.nx, z)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.ny, self.nx, self.nz)
    }

    pub fn same_shape<U>(&self, other: &Volume<U>) -> bool {
        self.dims() == other.dims()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// One A-scan (all depths at `(y, x)`).
    pub fn column(&self, y: usize, x: usize) -> &[T] {
        let s = self.idx(y, x, 0);
        &self.data[s..s + self.nz]
    }

    pub fn column_mut(&mut self, y: usize, x: usize) -> &mut [T] {
        let s = self.idx(y, x, 0);
        let nz = self.nz;
        &mut self.data[s..s + nz]
    }

    /// One B-scan (`nx * nz` samples).
    pub fn bscan(&self, y: usize) -> &[T] {
        let n = self.nx * self.nz;
        &self.data[y * n..(y + 1) * n]
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> Volume<U> {
        Volume {
            ny: self.ny,
            nx: self.nx,
            nz: self.nz,
            data: self.data.iter().map(f).collect(),
        }
    }
}

/// A dense 2D grid indexed `[y][x]` (en-face images, surfaces, α maps).
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    pub ny: usize,
    pub nx: usize,
    pub data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(ny: usize, nx: usize, value: T) -> Self {
        Grid {
            ny,
            nx,
            data: vec![value; ny * nx],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(ny: usize, nx: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != ny * nx {
            return Err(Error::shape(format!(
                "grid {ny}x{nx} needs {} samples, got {}",
                ny * nx,
                data.len()
            )));
        }
        Ok(Grid { ny, nx, data })
    }

    #[inline]
    pub fn idx(&self, y: usize, x: usize) -> usize {
        y * self.nx + x
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> &T {
        &self.data[y * self.nx + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: T) {
        let i = y * self.nx + x;
        self.data[i] = v;
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.ny, self.nx)
    }

    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.dims() == other.dims()
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> Grid<U> {
        Grid {
            ny: self.ny,
            nx: self.nx,
            data: self.data.iter().map(f).collect(),
        }
    }
}

/// Raw OCT samples, either amplitudes or complex values.
#[derive(Debug, Clone, PartialEq)]
pub enum Samples {
    Amplitude(Vec<f32>),
    Complex(Vec<Complex32>),
}

impl Samples {
    pub fn len(&self) -> usize {
        match self {
            Samples::Amplitude(v) => v.len(),
            Samples::Complex(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    Amplitude,
    Complex,
}

/// Repeated-B-scan OCT data indexed `[band][repeat][y][x][z]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OctVolume {
    pub protocol: ScanProtocol,
    pub n_bands: usize,
    pub n_repeats: usize,
    pub ny: usize,
    pub nx: usize,
    pub nz: usize,
    pub samples: Samples,
}

impl OctVolume {
    pub fn new(
        protocol: ScanProtocol,
        dims: [usize; 5],
        samples: Samples,
    ) -> Result<Self> {
        let [l, n, ny, nx, nz] = dims;
        if samples.len() != l * n * ny * nx * nz {
            return Err(Error::shape(format!(
                "OCT volume {dims:?} needs {} samples, got {}",
                l * n * ny * nx * nz,
                samples.len()
            )));
        }
        let vol = OctVolume {
            protocol,
            n_bands: l,
            n_repeats: n,
            ny,
            nx,
            nz,
            samples,
        };
        vol.check()?;
        Ok(vol)
    }

    /// Validates sample invariants: finite everywhere, amplitudes ≥ 0.
    pub fn check(&self) -> Result<()> {
        if self.n_bands == 0 || self.n_repeats == 0 || self.ny == 0 || self.nx == 0 || self.nz == 0
        {
            return Err(Error::shape("OCT volume has an empty dimension"));
        }
        match &self.samples {
            Samples::Amplitude(v) => {
                if let Some(p) = v.iter().position(|a| !a.is_finite() || *a < 0.0) {
                    return Err(Error::invalid(format!(
                        "amplitude sample {p} is negative or not finite"
                    )));
                }
            }
            Samples::Complex(v) => {
                if let Some(p) = v.iter().position(|c| !c.re.is_finite() || !c.im.is_finite()) {
                    return Err(Error::invalid(format!("complex sample {p} is not finite")));
                }
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> [usize; 5] {
        [self.n_bands, self.n_repeats, self.ny, self.nx, self.nz]
    }

    pub fn kind(&self) -> SampleKind {
        match self.samples {
            Samples::Amplitude(_) => SampleKind::Amplitude,
            Samples::Complex(_) => SampleKind::Complex,
        }
    }

    pub fn voxels(&self) -> usize {
        self.ny * self.nx * self.nz
    }

    /// Offset of the `(band, repeat)` sub-volume.
    #[inline]
    pub fn frame_offset(&self, band: usize, repeat: usize) -> usize {
        (band * self.n_repeats + repeat) * self.voxels()
    }

    /// Amplitude of one sample regardless of storage kind.
    #[inline]
    pub fn amplitude(&self, band: usize, repeat: usize, voxel: usize) -> f32 {
        let i = self.frame_offset(band, repeat) + voxel;
        match &self.samples {
            Samples::Amplitude(v) => v[i],
            Samples::Complex(v) => v[i].norm(),
        }
    }

    /// Converts complex samples to amplitudes; amplitude volumes are cloned.
    pub fn to_amplitude(&self) -> OctVolume {
        let samples = match &self.samples {
            Samples::Amplitude(v) => Samples::Amplitude(v.clone()),
            Samples::Complex(v) => Samples::Amplitude(v.iter().map(|c| c.norm()).collect()),
        };
        OctVolume {
            samples,
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> OctVolume {
        OctVolume {
            protocol: self.protocol.clone(),
            n_bands: self.n_bands,
            n_repeats: self.n_repeats,
            ny: self.ny,
            nx: self.nx,
            nz: self.nz,
            samples: Samples::Amplitude(Vec::new()),
        }
    }

    /// Structural OCT: mean amplitude over bands and repeats.
    pub fn structural(&self) -> Volume<f32> {
        use crate::par::*;
        let nvox = self.voxels();
        let nframes = (self.n_bands * self.n_repeats) as f32;
        let bscan = self.nx * self.nz;
        let mut out = vec![0.0f32; nvox];
        out.par_chunks_mut(bscan).enumerate().for_each(|(y, chunk)| {
            for b in 0..self.n_bands {
                for r in 0..self.n_repeats {
                    let off = self.frame_offset(b, r) + y * bscan;
                    for (k, o) in chunk.iter_mut().enumerate() {
                        *o += match &self.samples {
                            Samples::Amplitude(v) => v[off + k],
                            Samples::Complex(v) => v[off + k].norm(),
                        };
                    }
                }
            }
            for o in chunk.iter_mut() {
                *o /= nframes;
            }
        });
        Volume {
            ny: self.ny,
            nx: self.nx,
            nz: self.nz,
            data: out,
        }
    }
}

/// Unnormalized and normalized OCTA at interscan times Δt … (N−1)Δt.
#[derive(Debug, Clone, PartialEq)]
pub struct OctaStack {
    pub protocol: ScanProtocol,
    /// `unnormalized[m]` is the volume at interscan time `(m + 1)·Δt`.
    pub unnormalized: Vec<Volume<f32>>,
    pub normalized: Vec<Volume<f32>>,
}

impl OctaStack {
    pub fn m_count(&self) -> usize {
        self.normalized.len()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.normalized
            .first()
            .map(|v| v.dims())
            .unwrap_or((0, 0, 0))
    }

    pub fn interscan_times(&self) -> Vec<f64> {
        (1..=self.m_count())
            .map(|m| m as f64 * self.protocol.dt_fundamental_ms)
            .collect()
    }

    /// Checks `M = N − 1` and `normalized ∈ [0, 1]` at every voxel.
    pub fn check(&self) -> Result<()> {
        if self.m_count() + 1 != self.protocol.n_repeats {
            return Err(Error::shape(format!(
                "stack has {} interscan times but protocol has {} repeats",
                self.m_count(),
                self.protocol.n_repeats
            )));
        }
        for (m, v) in self.normalized.iter().enumerate() {
            if let Some(i) = v.data.iter().position(|x| !(0.0..=1.0).contains(x)) {
                return Err(Error::invalid(format!(
                    "normalized OCTA out of [0,1] at M={} voxel {i}: {}",
                    m + 1,
                    v.data[i]
                )));
            }
        }
        Ok(())
    }

    /// Mean unnormalized OCTA over all interscan times.
    pub fn mean_unnormalized(&self) -> Volume<f32> {
        let first = &self.unnormalized[0];
        let mut out = Volume::filled(first.ny, first.nx, first.nz, 0.0f32);
        for v in &self.unnormalized {
            for (o, x) in out.data.iter_mut().zip(&v.data) {
                *o += x;
            }
        }
        let k = self.unnormalized.len() as f32;
        out.data.iter_mut().for_each(|o| *o /= k);
        out
    }
}

/// Named retinal surfaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Surface {
    Ilm,
    RnflPosterior,
    InlCenter,
    Rpe,
    FineRpe,
}

impl Surface {
    pub const ALL: [Surface; 5] = [
        Surface::Ilm,
        Surface::RnflPosterior,
        Surface::InlCenter,
        Surface::Rpe,
        Surface::FineRpe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Surface::Ilm => "ilm",
            Surface::RnflPosterior => "rnfl_posterior",
            Surface::InlCenter => "inl_center",
            Surface::Rpe => "rpe",
            Surface::FineRpe => "fine_rpe",
        }
    }

    pub fn parse(s: &str) -> Option<Surface> {
        Surface::ALL.into_iter().find(|x| x.name() == s)
    }
}

/// Per-(y, x) surface depths in µm from the volume top.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSurfaces {
    pub ilm: Grid<f32>,
    pub rnfl_posterior: Grid<f32>,
    pub inl_center: Grid<f32>,
    pub rpe: Grid<f32>,
    pub fine_rpe: Grid<f32>,
    /// A-scans where some surface was in-filled or clamped.
    pub flagged: Grid<u8>,
}

impl LayerSurfaces {
    pub fn get(&self, s: Surface) -> &Grid<f32> {
        match s {
            Surface::Ilm => &self.ilm,
            Surface::RnflPosterior => &self.rnfl_posterior,
            Surface::InlCenter => &self.inl_center,
            Surface::Rpe => &self.rpe,
            Surface::FineRpe => &self.fine_rpe,
        }
    }

    /// Flat surfaces at fixed depths; mostly useful for tests and phantoms.
    pub fn flat(ny: usize, nx: usize, ilm: f32, rnflp: f32, inl: f32, rpe: f32) -> Self {
        LayerSurfaces {
            ilm: Grid::filled(ny, nx, ilm),
            rnfl_posterior: Grid::filled(ny, nx, rnflp),
            inl_center: Grid::filled(ny, nx, inl),
            rpe: Grid::filled(ny, nx, rpe),
            fine_rpe: Grid::filled(ny, nx, rpe),
            flagged: Grid::filled(ny, nx, 0),
        }
    }

    /// Positions (flat index) where `ILM < RNFLp < INLc < RPE` fails.
    pub fn ordering_violations(&self) -> Vec<usize> {
        (0..self.ilm.data.len())
            .filter(|&i| {
                !(self.ilm.data[i] < self.rnfl_posterior.data[i]
                    && self.rnfl_posterior.data[i] < self.inl_center.data[i]
                    && self.inl_center.data[i] < self.rpe.data[i])
            })
            .collect()
    }
}
