//! Capillary identification: en-face vesselness, skeleton graph and segment
//! IDs, 3D oriented-flux mask, and projection of IDs onto the mask.

mod oof;
mod otsu;
mod skeleton;
mod vesselness;

pub use oof::{ball_flux_transform, oof_measure, oof_response, sym3_eigen, tubular_gate, OofResult};
pub use otsu::{apply_threshold, otsu_log_threshold, OtsuResult};
pub use skeleton::{assign_ids, build_graph, skeletonize_graph, thin, Link, Node, VesselGraph};
pub use vesselness::{vesselness_2d, VesselnessConfig, VesselnessKind};

use crate::layers::SlabBounds;
use crate::volume::{Grid, Volume};
use crate::{Error, Result};

/// Otsu-on-log mask of an OOF response (or any nonnegative volume).
pub fn mask_3d(m: &Volume<f32>) -> (Volume<u8>, OtsuResult) {
    let t = otsu_log_threshold(&m.data);
    let data = apply_threshold(&m.data, &t);
    (
        Volume {
            ny: m.ny,
            nx: m.nx,
            nz: m.nz,
            data,
        },
        t,
    )
}

/// Otsu-on-log mask of a 2D response.
pub fn mask_2d(v: &Grid<f32>) -> (Grid<u8>, OtsuResult) {
    let t = otsu_log_threshold(&v.data);
    (
        Grid {
            ny: v.ny,
            nx: v.nx,
            data: apply_threshold(&v.data, &t),
        },
        t,
    )
}

/// Writes the column ID of `id_image` into every masked voxel inside `slab`.
/// Voxels already labelled are left alone, so slabs can be projected in turn.
pub fn project_ids_into(out: &mut Volume<u32>, id_image: &Grid<u32>, mask: &Volume<u8>, slab: &SlabBounds) -> Result<()> {
    if id_image.dims() != (mask.ny, mask.nx) || slab.dims() != id_image.dims() || !out.same_shape(mask) {
        return Err(Error::shape("ID image, mask, slab and output must share the transverse grid"));
    }
    let nz = mask.nz;
    for (i, &id) in id_image.data.iter().enumerate() {
        if id == 0 {
            continue;
        }
        for z in slab.start[i].min(nz)..slab.end[i].min(nz) {
            let k = i * nz + z;
            if mask.data[k] != 0 && out.data[k] == 0 {
                out.data[k] = id;
            }
        }
    }
    Ok(())
}

pub fn project_ids(id_image: &Grid<u32>, mask: &Volume<u8>, slab: &SlabBounds) -> Result<Volume<u32>> {
    let mut out = Volume::filled(mask.ny, mask.nx, mask.nz, 0u32);
    project_ids_into(&mut out, id_image, mask, slab)?;
    Ok(out)
}

/// 26-connected components of a 3D mask, labelled 1.. in raster order.
pub fn connected_components_3d(mask: &Volume<u8>) -> (Volume<u32>, u32) {
    let (ny, nx, nz) = mask.dims();
    let mut lab = Volume::filled(ny, nx, nz, 0u32);
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if mask.data[start] == 0 || lab.data[start] != 0 {
            continue;
        }
        next += 1;
        lab.data[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (y, x, z) = mask.coords(i);
            for yy in y.saturating_sub(1)..(y + 2).min(ny) {
                for xx in x.saturating_sub(1)..(x + 2).min(nx) {
                    for zz in z.saturating_sub(1)..(z + 2).min(nz) {
                        let k = mask.idx(yy, xx, zz);
                        if mask.data[k] != 0 && lab.data[k] == 0 {
                            lab.data[k] = next;
                            stack.push(k);
                        }
                    }
                }
            }
        }
    }
    (lab, next)
}

/// 2D products of the en-face stage for one slab.
#[derive(Debug, Clone, PartialEq)]
pub struct EnfaceVessels {
    pub vesselness: Grid<f32>,
    pub mask: Grid<u8>,
    pub otsu: OtsuResult,
    pub graph: VesselGraph,
    pub ids: Grid<u32>,
}

/// Vesselness → Otsu mask → skeleton graph → per-pixel IDs.
pub fn enface_vessels(
    enface: &Grid<f32>,
    scales_um: &[f64],
    spacing_um: (f64, f64),
    cfg: &VesselnessConfig,
    min_spur_px: usize,
) -> Result<EnfaceVessels> {
    let vesselness = vesselness_2d(enface, scales_um, spacing_um, cfg)?;
    let (mask, otsu) = mask_2d(&vesselness);
    let graph = skeletonize_graph(&mask, min_spur_px);
    let ids = assign_ids(&mask, &graph);
    Ok(EnfaceVessels {
        vesselness,
        mask,
        otsu,
        graph,
        ids,
    })
}

/// Shifts every link, node and ID by `offset` so graphs from separate slabs
/// can share one ID space.
pub fn offset_ids(ev: &mut EnfaceVessels, offset: u32) {
    for l in &mut ev.graph.links {
        l.id += offset;
    }
    for n in &mut ev.graph.nodes {
        for l in &mut n.links {
            *l += offset;
        }
    }
    for v in &mut ev.ids.data {
        if *v != 0 {
            *v += offset;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slab(ny: usize, nx: usize, a: usize, b: usize) -> SlabBounds {
        SlabBounds {
            name: "t".into(),
            ny,
            nx,
            start: vec![a; ny * nx],
            end: vec![b; ny * nx],
            flagged: vec![0; ny * nx],
        }
    }

    #[test]
    fn projection_follows_columns() {
        let mut mask = Volume::filled(2, 3, 10, 0u8);
        for z in 2..8 {
            mask.set(0, 1, z, 1);
            mask.set(1, 2, z, 1);
        }
        let mut ids = Grid::filled(2, 3, 0u32);
        ids.set(0, 1, 7);
        let out = project_ids(&ids, &mask, &slab(2, 3, 0, 10)).unwrap();
        assert_eq!(out.column(0, 1)[2..8], [7; 6]);
        assert!(out.column(1, 2).iter().all(|&v| v == 0));
        assert!(out.data.iter().zip(&mask.data).all(|(&i, &m)| i == 0 || m == 1));
    }

    #[test]
    fn stacked_slabs_are_independent() {
        let mask = Volume::filled(1, 1, 20, 1u8);
        let a = Grid::filled(1, 1, 3u32);
        let b = Grid::filled(1, 1, 9u32);
        let mut out = Volume::filled(1, 1, 20, 0u32);
        project_ids_into(&mut out, &a, &mask, &slab(1, 1, 0, 8)).unwrap();
        project_ids_into(&mut out, &b, &mask, &slab(1, 1, 10, 20)).unwrap();
        assert_eq!(out.data[..8], [3; 8]);
        assert_eq!(out.data[8..10], [0; 2]);
        assert_eq!(out.data[10..], [9; 10]);
    }

    #[test]
    fn mismatched_shapes() {
        let mask = Volume::filled(2, 2, 4, 1u8);
        assert!(project_ids(&Grid::filled(3, 2, 1), &mask, &slab(3, 2, 0, 4)).is_err());
    }

    #[test]
    fn empty_response_gives_empty_mask() {
        let (m, t) = mask_3d(&Volume::filled(3, 3, 3, 0.0));
        assert!(t.degenerate);
        assert!(m.data.iter().all(|&v| v == 0));
    }

    #[test]
    fn components() {
        let mut m = Volume::filled(4, 4, 4, 0u8);
        m.set(0, 0, 0, 1);
        m.set(1, 1, 1, 1);
        m.set(2, 2, 2, 1);
        m.set(3, 0, 0, 1);
        let (lab, n) = connected_components_3d(&m);
        assert_eq!(n, 2);
        assert_eq!(lab.get(2, 2, 2), lab.get(0, 0, 0));
    }
}
