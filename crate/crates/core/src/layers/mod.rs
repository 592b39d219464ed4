//! Retinal surfaces, flattening, surface smoothing and vascular slabs.

mod lowess;
mod segment;

pub use lowess::{half_widths, lowess_2d};
pub use segment::{
    enforce_order, flatten, load_overrides, refine_rpe, segment_inner_layers, segment_layers, segment_rpe, unflatten,
    Flattened, InnerLayers, LayerConfig, LayerResult, Override, OverrideFile,
};

use crate::volume::{Grid, LayerSurfaces, Surface, Volume};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// A surface plus a signed offset (positive = posterior).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub surface: Surface,
    #[serde(default)]
    pub offset_um: f64,
}

impl Bound {
    pub fn new(surface: Surface, offset_um: f64) -> Self {
        Bound { surface, offset_um }
    }
}

/// Default choroid slab offsets posterior to the fine RPE, and thickness.
pub const CHOROID_OFFSETS_UM: [f64; 3] = [13.0, 27.0, 40.0];
pub const CHOROID_THICKNESS_UM: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlabSpec {
    pub name: String,
    pub anterior: Bound,
    pub posterior: Bound,
}

impl SlabSpec {
    pub fn new(name: &str, anterior: Bound, posterior: Bound) -> Self {
        SlabSpec {
            name: name.to_string(),
            anterior,
            posterior,
        }
    }

    pub fn rnflp(ilm_offset_um: f64) -> Self {
        Self::new(
            "rnflp",
            Bound::new(Surface::Ilm, ilm_offset_um),
            Bound::new(Surface::RnflPosterior, 0.0),
        )
    }

    pub fn scp_icp() -> Self {
        Self::new(
            "scp_icp",
            Bound::new(Surface::RnflPosterior, 0.0),
            Bound::new(Surface::InlCenter, 0.0),
        )
    }

    pub fn dcp(rpe_offset_um: f64) -> Self {
        Self::new(
            "dcp",
            Bound::new(Surface::InlCenter, 0.0),
            Bound::new(Surface::Rpe, -rpe_offset_um),
        )
    }

    /// Choroid slab `k` (1-based) of [`CHOROID_OFFSETS_UM`].
    pub fn choroid(k: usize) -> Result<Self> {
        let off = *CHOROID_OFFSETS_UM
            .get(k.wrapping_sub(1))
            .ok_or_else(|| Error::invalid(format!("choroid slab {k} not in 1..=3")))?;
        Ok(Self::new(
            &format!("choroid{k}"),
            Bound::new(Surface::FineRpe, off),
            Bound::new(Surface::FineRpe, off + CHOROID_THICKNESS_UM),
        ))
    }

    /// Looks up a named preset: `rnflp`, `scp_icp`, `dcp`, `choroid1..3`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "rnflp" => Ok(Self::rnflp(19.0)),
            "scp_icp" | "scp" => Ok(Self::scp_icp()),
            "dcp" => Ok(Self::dcp(80.0)),
            _ => match name.strip_prefix("choroid").and_then(|k| k.parse().ok()) {
                Some(k) => Self::choroid(k),
                None => Err(Error::invalid(format!("unknown slab '{name}'"))),
            },
        }
    }
}

/// Evaluated slab: voxel range `start[i]..end[i]` per A-scan `i = y·nx + x`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlabBounds {
    pub name: String,
    pub ny: usize,
    pub nx: usize,
    pub start: Vec<usize>,
    pub end: Vec<usize>,
    /// A-scans where the slab came out empty.
    pub flagged: Vec<u8>,
}

impl SlabBounds {
    pub fn dims(&self) -> (usize, usize) {
        (self.ny, self.nx)
    }

    pub fn range(&self, y: usize, x: usize) -> std::ops::Range<usize> {
        let i = y * self.nx + x;
        self.start[i]..self.end[i]
    }

    /// Whole-depth slab.
    pub fn full(ny: usize, nx: usize, nz: usize) -> Self {
        SlabBounds {
            name: "full".into(),
            ny,
            nx,
            start: vec![0; ny * nx],
            end: vec![nz; ny * nx],
            flagged: vec![0; ny * nx],
        }
    }

    pub fn mask(&self, nz: usize) -> Volume<u8> {
        let mut m = Volume::filled(self.ny, self.nx, nz, 0u8);
        for (i, col) in m.data.chunks_mut(nz).enumerate() {
            col[self.start[i].min(nz)..self.end[i].min(nz)].fill(1);
        }
        m
    }
}

/// Converts bound depths to end-exclusive voxel ranges `round(z / dz)`.
pub fn evaluate_slab(spec: &SlabSpec, surfaces: &LayerSurfaces, dz_um: f64, nz: usize) -> SlabBounds {
    let a = surfaces.get(spec.anterior.surface);
    let p = surfaces.get(spec.posterior.surface);
    let (ny, nx) = a.dims();
    let to_idx = |d: f32, off: f64| -> usize {
        let z = ((d as f64 + off) / dz_um).round();
        if z.is_finite() {
            z.clamp(0.0, nz as f64) as usize
        } else {
            0
        }
    };
    let mut start = Vec::with_capacity(ny * nx);
    let mut end = Vec::with_capacity(ny * nx);
    let mut flagged = Vec::with_capacity(ny * nx);
    for i in 0..ny * nx {
        let s = to_idx(a.data[i], spec.anterior.offset_um);
        let e = to_idx(p.data[i], spec.posterior.offset_um);
        if e <= s {
            start.push(s);
            end.push(s);
            flagged.push(1);
        } else {
            start.push(s);
            end.push(e);
            flagged.push(0);
        }
    }
    SlabBounds {
        name: spec.name.clone(),
        ny,
        nx,
        start,
        end,
        flagged,
    }
}

/// A slab cut from a volume: voxels outside are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedSlab {
    pub volume: Volume<f32>,
    /// Mean over the slab depth per A-scan; zero where the slab is empty.
    pub enface: Grid<f32>,
    pub flagged: Grid<u8>,
}

pub fn extract_slab(vol: &Volume<f32>, slab: &SlabBounds) -> Result<ExtractedSlab> {
    if slab.dims() != (vol.ny, vol.nx) {
        return Err(Error::shape("slab grid does not match volume"));
    }
    let nz = vol.nz;
    let mut out = Volume::filled(vol.ny, vol.nx, nz, 0.0f32);
    for (i, col) in out.data.chunks_mut(nz).enumerate() {
        let r = slab.start[i].min(nz)..slab.end[i].min(nz);
        col[r.clone()].copy_from_slice(&vol.data[i * nz + r.start..i * nz + r.end]);
    }
    Ok(ExtractedSlab {
        enface: crate::render::enface(vol, slab, crate::render::Reducer::Mean)?,
        volume: out,
        flagged: Grid::from_vec(vol.ny, vol.nx, slab.flagged.clone())?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn surfaces() -> LayerSurfaces {
        LayerSurfaces::flat(3, 4, 30.0, 60.0, 120.0, 250.0)
    }

    #[test]
    fn dcp_bounds() {
        let s = SlabSpec::dcp(80.0);
        assert_eq!(s.anterior, Bound::new(Surface::InlCenter, 0.0));
        assert_eq!(s.posterior, Bound::new(Surface::Rpe, -80.0));
        let b = evaluate_slab(&s, &surfaces(), 2.7, 120);
        assert_eq!(b.range(1, 1), 44..63);
    }

    #[test]
    fn choroid_slab_one() {
        let s = SlabSpec::choroid(1).unwrap();
        assert_eq!(s.anterior, Bound::new(Surface::FineRpe, 13.0));
        assert_eq!(s.posterior, Bound::new(Surface::FineRpe, 21.0));
        assert!(SlabSpec::choroid(4).is_err());
        assert_eq!(SlabSpec::preset("choroid3").unwrap().anterior.offset_um, 40.0);
    }

    #[test]
    fn constant_volume_enface() {
        let v = Volume::filled(3, 4, 120, 0.75f32);
        let b = evaluate_slab(&SlabSpec::scp_icp(), &surfaces(), 2.7, 120);
        let e = extract_slab(&v, &b).unwrap();
        assert!(e.enface.data.iter().all(|&x| x == 0.75));
        assert_eq!(e.volume.data.iter().filter(|&&x| x > 0.0).count(), 12 * (44 - 22));
    }

    #[test]
    fn slabs_are_disjoint() {
        let s = surfaces();
        let r = evaluate_slab(&SlabSpec::rnflp(19.0), &s, 2.7, 120);
        let c = evaluate_slab(&SlabSpec::scp_icp(), &s, 2.7, 120);
        let d = evaluate_slab(&SlabSpec::dcp(80.0), &s, 2.7, 120);
        for i in 0..12 {
            assert!(r.end[i] <= c.start[i] && c.end[i] <= d.start[i]);
        }
    }

    #[test]
    fn empty_slab_is_flagged() {
        let s = LayerSurfaces::flat(2, 2, 30.0, 60.0, 120.0, 150.0);
        let b = evaluate_slab(&SlabSpec::dcp(80.0), &s, 2.7, 120);
        assert!(b.flagged.iter().all(|&f| f == 1));
        let e = extract_slab(&Volume::filled(2, 2, 120, 1.0), &b).unwrap();
        assert!(e.enface.data.iter().all(|&x| x == 0.0));
    }
}
