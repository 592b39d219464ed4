//! Spatial compilation of normalized OCTA and per-domain decay fitting.

mod decay;

pub use decay::{fit_decay, DecayFit, FitBounds, FitStatus};

use crate::filters::median_in_place;
use crate::layers::SlabBounds;
use crate::par::*;
use crate::protocol::ScanProtocol;
use crate::vessels::VesselGraph;
use crate::volume::{Grid, OctaStack, Volume};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

/// Normalized OCTA of one spatial domain: one row per voxel, one column per
/// interscan time (ascending).
#[derive(Debug, Clone, PartialEq)]
pub struct OctaMatrix {
    pub id: u32,
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows × cols`.
    pub values: Vec<f32>,
    /// Flat voxel index of each row.
    pub voxels: Vec<usize>,
    /// Inclusive slow-index range covered by the rows.
    pub y_range: (usize, usize),
}

impl OctaMatrix {
    pub fn from_voxels(id: u32, voxels: &[usize], normalized: &[Volume<f32>]) -> Self {
        let cols = normalized.len();
        let mut values = Vec::with_capacity(voxels.len() * cols);
        let (mut ymin, mut ymax) = (usize::MAX, 0);
        for &v in voxels {
            for m in normalized {
                values.push(m.data[v]);
            }
            if let Some(first) = normalized.first() {
                let (y, _, _) = first.coords(v);
                ymin = ymin.min(y);
                ymax = ymax.max(y);
            }
        }
        OctaMatrix {
            id,
            rows: voxels.len(),
            cols,
            values,
            voxels: voxels.to_vec(),
            y_range: if voxels.is_empty() { (0, 0) } else { (ymin, ymax) },
        }
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, k: usize) -> Vec<f32> {
        (0..self.rows).map(|i| self.values[i * self.cols + k]).collect()
    }
}

/// Voxel lists per nonzero ID, in ascending ID and voxel order.
pub fn segment_voxels(ids: &Volume<u32>) -> BTreeMap<u32, Vec<usize>> {
    let mut out: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &id) in ids.data.iter().enumerate() {
        if id != 0 {
            out.entry(id).or_default().push(i);
        }
    }
    out
}

/// Matrix for `segment_id`; errors if no voxel carries that ID.
pub fn compile_matrix(ids: &Volume<u32>, stack: &OctaStack, segment_id: u32) -> Result<OctaMatrix> {
    check_shape(ids, stack)?;
    let voxels: Vec<usize> = ids
        .data
        .iter()
        .enumerate()
        .filter(|(_, &v)| v == segment_id && segment_id != 0)
        .map(|(i, _)| i)
        .collect();
    if voxels.is_empty() {
        return Err(Error::UnknownSegment(segment_id));
    }
    Ok(OctaMatrix::from_voxels(segment_id, &voxels, &stack.normalized))
}

fn check_shape(ids: &Volume<u32>, stack: &OctaStack) -> Result<()> {
    if ids.dims() != stack.dims() {
        return Err(Error::shape(format!(
            "id volume {:?} vs OCTA stack {:?}",
            ids.dims(),
            stack.dims()
        )));
    }
    Ok(())
}

/// Interscan times `k·Δt` and per-column medians.
pub fn column_medians(m: &OctaMatrix, dt_ms: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if m.rows == 0 {
        return Err(Error::invalid("empty OCTA matrix"));
    }
    let tau = (1..=m.cols).map(|k| k as f64 * dt_ms).collect();
    let med = (0..m.cols)
        .map(|k| median_in_place(&mut m.column(k)) as f64)
        .collect();
    Ok((tau, med))
}

/// Compiles the given voxels and fits their column medians.
pub fn fit_voxels(voxels: &[usize], normalized: &[Volume<f32>], dt_ms: f64, n_min: usize, bounds: &FitBounds) -> DecayFit {
    if voxels.len() < n_min.max(1) {
        return DecayFit::insufficient(voxels.len());
    }
    let cols = normalized.len();
    let mut col = Vec::with_capacity(voxels.len());
    let mut med = Vec::with_capacity(cols);
    for m in normalized {
        col.clear();
        col.extend(voxels.iter().map(|&v| m.data[v]));
        med.push(median_in_place(&mut col) as f64);
    }
    let tau: Vec<f64> = (1..=cols).map(|k| k as f64 * dt_ms).collect();
    let mut f = fit_decay(&tau, &med, bounds);
    f.n_voxels = voxels.len();
    f
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentFit {
    pub id: u32,
    #[serde(flatten)]
    pub fit: DecayFit,
}

/// Fits every nonzero ID independently, in ascending ID order.
pub fn fit_segments(ids: &Volume<u32>, stack: &OctaStack, n_min: usize, bounds: &FitBounds) -> Result<Vec<SegmentFit>> {
    check_shape(ids, stack)?;
    let groups: Vec<(u32, Vec<usize>)> = segment_voxels(ids).into_iter().collect();
    let dt = stack.protocol.dt_fundamental_ms;
    Ok(groups
        .par_iter()
        .map(|(id, vox)| SegmentFit {
            id: *id,
            fit: fit_voxels(vox, &stack.normalized, dt, n_min, bounds),
        })
        .collect())
}

/// α per skeleton pixel; NaN where undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaMap {
    pub alpha: Grid<f32>,
}

/// Fits all segments and paints each usable segment's α onto its graph link.
///
/// Graph links without voxels, and segments flagged insufficient, stay NaN.
pub fn fit_all_segments(
    ids: &Volume<u32>,
    stack: &OctaStack,
    graph: &VesselGraph,
    n_min: usize,
    bounds: &FitBounds,
) -> Result<(Vec<SegmentFit>, AlphaMap)> {
    let fits = fit_segments(ids, stack, n_min, bounds)?;
    let alpha = paint_links(&fits, graph);
    Ok((fits, AlphaMap { alpha }))
}

/// Segment α on the link (skeleton) pixels of `graph`, NaN elsewhere.
pub fn paint_links(fits: &[SegmentFit], graph: &VesselGraph) -> Grid<f32> {
    let lookup = alpha_lookup(fits);
    let mut alpha = Grid::filled(graph.ny, graph.nx, f32::NAN);
    for link in &graph.links {
        if let Some(&a) = lookup.get(&link.id) {
            for &(y, x) in &link.pixels {
                alpha.set(y, x, a);
            }
        }
    }
    alpha
}

fn alpha_lookup(fits: &[SegmentFit]) -> BTreeMap<u32, f32> {
    fits.iter()
        .filter(|f| f.fit.is_usable())
        .map(|f| (f.id, f.fit.alpha as f32))
        .collect()
}

/// Paints segment α onto every pixel of a label image.
pub fn paint_labels(fits: &[SegmentFit], labels: &Grid<u32>) -> Grid<f32> {
    let lookup = alpha_lookup(fits);
    labels.map(|&id| lookup.get(&id).copied().unwrap_or(f32::NAN))
}

/// Choroid-mode fits on a regular cuboid tiling of a slab.
#[derive(Debug, Clone, PartialEq)]
pub struct CuboidFits {
    /// Cuboid size in voxels `(y, x, z)`.
    pub size_px: (usize, usize, usize),
    pub tiles_y: usize,
    pub tiles_x: usize,
    pub layers: usize,
    /// Indexed `(layer, ty, tx)`.
    pub fits: Vec<DecayFit>,
}

impl CuboidFits {
    pub fn get(&self, layer: usize, ty: usize, tx: usize) -> &DecayFit {
        &self.fits[(layer * self.tiles_y + ty) * self.tiles_x + tx]
    }

    /// α per tile of one axial layer; NaN where insufficient.
    pub fn alpha_grid(&self, layer: usize) -> Grid<f32> {
        let mut g = Grid::filled(self.tiles_y, self.tiles_x, f32::NAN);
        for ty in 0..self.tiles_y {
            for tx in 0..self.tiles_x {
                let f = self.get(layer, ty, tx);
                if f.is_usable() {
                    g.set(ty, tx, f.alpha as f32);
                }
            }
        }
        g
    }
}

/// Cuboid edge lengths in voxels: `round(size_um / spacing)`.
pub fn cuboid_voxels(protocol: &ScanProtocol, cuboid_um: (f64, f64, f64)) -> Result<(usize, usize, usize)> {
    let r = |um: f64, sp: f64| (um / sp).round();
    let sy = r(cuboid_um.1, protocol.bscan_spacing_um());
    let sx = r(cuboid_um.0, protocol.ascan_spacing_um);
    let sz = r(cuboid_um.2, protocol.axial_spacing_um);
    if !(sy >= 1.0 && sx >= 1.0 && sz >= 1.0) {
        return Err(Error::invalid(format!(
            "cuboid {cuboid_um:?} µm is smaller than one voxel"
        )));
    }
    Ok((sy as usize, sx as usize, sz as usize))
}

/// Tiles the slab with non-overlapping cuboids of `cuboid_um` = (fast, slow,
/// axial) µm and fits each. Axial layers follow the slab's anterior bound.
pub fn fit_cuboids(
    stack: &OctaStack,
    slab: &SlabBounds,
    cuboid_um: (f64, f64, f64),
    n_min: usize,
    bounds: &FitBounds,
) -> Result<CuboidFits> {
    let (ny, nx, _) = stack.dims();
    if slab.dims() != (ny, nx) {
        return Err(Error::shape("slab bounds do not match the OCTA stack"));
    }
    let (sy, sx, sz) = cuboid_voxels(&stack.protocol, cuboid_um)?;
    let tiles_y = ny / sy;
    let tiles_x = nx / sx;
    let depth = (0..ny * nx).map(|i| slab.end[i] - slab.start[i]).max().unwrap_or(0);
    let layers = depth / sz;
    let first = &stack.normalized[0];
    let cells: Vec<(usize, usize, usize)> = (0..layers)
        .flat_map(|l| (0..tiles_y).flat_map(move |ty| (0..tiles_x).map(move |tx| (l, ty, tx))))
        .collect();
    let dt = stack.protocol.dt_fundamental_ms;
    let fits = cells
        .par_iter()
        .map(|&(l, ty, tx)| {
            let mut vox = Vec::new();
            for y in ty * sy..(ty + 1) * sy {
                for x in tx * sx..(tx + 1) * sx {
                    let i = y * nx + x;
                    let z0 = slab.start[i] + l * sz;
                    let z1 = (z0 + sz).min(slab.end[i]);
                    for z in z0..z1 {
                        vox.push(first.idx(y, x, z));
                    }
                }
            }
            fit_voxels(&vox, &stack.normalized, dt, n_min, bounds)
        })
        .collect();
    Ok(CuboidFits {
        size_px: (sy, sx, sz),
        tiles_y,
        tiles_x,
        layers,
        fits,
    })
}

/// Per-segment results as CSV: `id,alpha,beta,residual,n_voxels,status`.
pub fn write_fits_csv(path: impl AsRef<Path>, fits: &[SegmentFit]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    w.write_record(["id", "alpha", "beta", "residual", "n_voxels", "status"])
        .map_err(|e| Error::io(path, e.into()))?;
    for f in fits {
        w.write_record([
            f.id.to_string(),
            fmt_num(f.fit.alpha),
            fmt_num(f.fit.beta),
            fmt_num(f.fit.residual),
            f.fit.n_voxels.to_string(),
            f.fit.status.as_str().to_string(),
        ])
        .map_err(|e| Error::io(path, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        String::new()
    }
}

/// Reads a CSV written by [`write_fits_csv`].
pub fn read_fits_csv(path: impl AsRef<Path>) -> Result<Vec<SegmentFit>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::io(path, e.into()))?;
        let num = |i: usize| rec.get(i).and_then(|s| s.parse::<f64>().ok()).unwrap_or(f64::NAN);
        let status = match rec.get(5).unwrap_or("") {
            "ok" => FitStatus::Ok,
            "clamped_high" => FitStatus::ClampedHigh,
            "clamped_low" => FitStatus::ClampedLow,
            _ => FitStatus::Insufficient,
        };
        out.push(SegmentFit {
            id: rec.get(0).and_then(|s| s.parse().ok()).unwrap_or(0),
            fit: DecayFit {
                alpha: num(1),
                beta: num(2),
                residual: num(3),
                n_voxels: rec.get(4).and_then(|s| s.parse().ok()).unwrap_or(0),
                status,
            },
        });
    }
    Ok(out)
}

/// Writes a small text table, used by the CLI for human-readable summaries.
pub fn summary(fits: &[SegmentFit], mut w: impl Write) -> std::io::Result<()> {
    let usable: Vec<&SegmentFit> = fits.iter().filter(|f| f.fit.is_usable()).collect();
    writeln!(w, "segments: {} fitted, {} insufficient", usable.len(), fits.len() - usable.len())?;
    if !usable.is_empty() {
        let mean = usable.iter().map(|f| f.fit.alpha).sum::<f64>() / usable.len() as f64;
        writeln!(w, "mean alpha: {mean:.4} ms^-1")?;
    }
    Ok(())
}
