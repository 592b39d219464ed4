//! Repeatability, regional averages, cross-protocol consistency and
//! protocol feasibility.

use crate::protocol::ScanProtocol;
use crate::vessels::VesselGraph;
use crate::volume::Grid;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Sample standard deviation (n − 1) over the mean.
pub fn cv(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::invalid("cv needs at least two values"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean == 0.0 || !mean.is_finite() {
        return Err(Error::invalid("cv undefined for zero mean"));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(var.sqrt() / mean)
}

/// Least-squares `k` of `y = k·x`.
pub fn consistency_fit(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid("consistency fit needs two equal-length series of at least 2"));
    }
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("consistency fit: x is all zero"));
    }
    Ok(x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / sxx)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub name: String,
    pub mask: Grid<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionStat {
    pub name: String,
    pub mean: f64,
    pub n_pixels: usize,
}

/// Four quadrants of a disc of radius `radius_px` around `center`
/// `(y, x)`: superior (y above), temporal, inferior, nasal. `nasal_right`
/// picks which side of x is nasal. Each pixel belongs to one quadrant.
pub fn quadrant_masks(ny: usize, nx: usize, center: (f64, f64), radius_px: f64, nasal_right: bool) -> Vec<Region> {
    let names = ["superior", "nasal", "inferior", "temporal"];
    let mut masks = vec![Grid::filled(ny, nx, 0u8); 4];
    for y in 0..ny {
        for x in 0..nx {
            let dy = y as f64 - center.0;
            let dx = x as f64 - center.1;
            if dy * dy + dx * dx > radius_px * radius_px {
                continue;
            }
            let toward_nasal = if nasal_right { dx } else { -dx };
            let q = if dy.abs() >= toward_nasal.abs() {
                if dy < 0.0 {
                    0
                } else {
                    2
                }
            } else if toward_nasal > 0.0 {
                1
            } else {
                3
            };
            masks[q].set(y, x, 1);
        }
    }
    names
        .iter()
        .zip(masks)
        .map(|(n, mask)| Region {
            name: n.to_string(),
            mask,
        })
        .collect()
}

/// Mean of `map` over skeleton pixels inside each region, plus a `global`
/// entry over the union. Non-finite map values are skipped.
pub fn region_stats(map: &Grid<f32>, regions: &[Region], skeleton: &Grid<u8>) -> Result<Vec<RegionStat>> {
    let mut out = Vec::new();
    let mut union = Grid::filled(map.ny, map.nx, 0u8);
    let stat = |name: &str, mask: &Grid<u8>| -> Result<RegionStat> {
        if !mask.same_shape(map) || !skeleton.same_shape(map) {
            return Err(Error::shape(format!("region '{name}' does not match the map")));
        }
        let vals: Vec<f64> = (0..map.data.len())
            .filter(|&i| mask.data[i] != 0 && skeleton.data[i] != 0 && map.data[i].is_finite())
            .map(|i| map.data[i] as f64)
            .collect();
        if vals.is_empty() {
            return Err(Error::invalid(format!("region '{name}' has no skeleton pixels")));
        }
        Ok(RegionStat {
            name: name.to_string(),
            mean: vals.iter().sum::<f64>() / vals.len() as f64,
            n_pixels: vals.len(),
        })
    };
    for r in regions {
        out.push(stat(&r.name, &r.mask)?);
        for (u, m) in union.data.iter_mut().zip(&r.mask.data) {
            *u |= u8::from(*m != 0);
        }
    }
    out.push(stat("global", &union)?);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub dt_ms: f64,
    pub longest_ms: f64,
    /// `1 − exp(−α_max·Δt)`.
    pub short_saturation: f64,
    /// `1 − exp(−α_min·(N−1)Δt)`.
    pub long_saturation: f64,
    /// Shortest interscan time below 95% saturation.
    pub short_ok: bool,
    /// Longest interscan time beyond 50% saturation.
    pub long_ok: bool,
}

impl FeasibilityReport {
    pub fn pass(&self) -> bool {
        self.short_ok && self.long_ok
    }
}

/// Saturation bounds for an expected α range under a protocol.
pub fn protocol_feasibility(alpha_min: f64, alpha_max: f64, protocol: &ScanProtocol) -> FeasibilityReport {
    let dt = protocol.dt_fundamental_ms;
    let longest = (protocol.n_repeats.saturating_sub(1)) as f64 * dt;
    let short_rho = (-alpha_max * dt).exp();
    let long_rho = (-alpha_min * longest).exp();
    FeasibilityReport {
        alpha_min,
        alpha_max,
        dt_ms: dt,
        longest_ms: longest,
        short_saturation: 1.0 - short_rho,
        long_saturation: 1.0 - long_rho,
        short_ok: short_rho > 0.05,
        long_ok: long_rho < 0.5,
    }
}

/// Pairs of segment IDs across two graphs whose centerlines lie within
/// `max_mean_um` on average (mean nearest-pixel distance from the shorter
/// link), greedily by increasing distance. Pixel grids may differ.
pub fn match_by_centerline(
    a: &VesselGraph,
    spacing_a: (f64, f64),
    b: &VesselGraph,
    spacing_b: (f64, f64),
    max_mean_um: f64,
) -> Vec<(u32, u32, f64)> {
    let pts = |l: &crate::vessels::Link, s: (f64, f64)| -> Vec<(f64, f64)> {
        l.pixels.iter().map(|&(y, x)| (y as f64 * s.0, x as f64 * s.1)).collect()
    };
    let mean_dist = |p: &[(f64, f64)], q: &[(f64, f64)]| -> f64 {
        p.iter()
            .map(|&(y, x)| q.iter().map(|&(v, u)| ((y - v).powi(2) + (x - u).powi(2)).sqrt()).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / p.len() as f64
    };
    let mut cands = Vec::new();
    for la in &a.links {
        let pa = pts(la, spacing_a);
        for lb in &b.links {
            let pb = pts(lb, spacing_b);
            if pa.is_empty() || pb.is_empty() {
                continue;
            }
            let d = if pa.len() <= pb.len() { mean_dist(&pa, &pb) } else { mean_dist(&pb, &pa) };
            if d < max_mean_um {
                cands.push((la.id, lb.id, d));
            }
        }
    }
    cands.sort_by(|x, y| x.2.total_cmp(&y.2).then(x.0.cmp(&y.0)).then(x.1.cmp(&y.1)));
    let (mut used_a, mut used_b) = (Vec::new(), Vec::new());
    let mut out = Vec::new();
    for (ia, ib, d) in cands {
        if !used_a.contains(&ia) && !used_b.contains(&ib) {
            used_a.push(ia);
            used_b.push(ib);
            out.push((ia, ib, d));
        }
    }
    out.sort_by_key(|m| m.0);
    out
}

/// Ground-truth segment of each fitted segment: the most frequent nonzero
/// truth ID among its voxels (ties to the lower ID), if it covers at least
/// `min_fraction` of them.
pub fn match_by_truth(ids: &[u32], truth: &[u32], min_fraction: f64) -> BTreeMap<u32, u32> {
    let mut counts: BTreeMap<u32, BTreeMap<u32, usize>> = BTreeMap::new();
    let mut totals: BTreeMap<u32, usize> = BTreeMap::new();
    for (&i, &t) in ids.iter().zip(truth) {
        if i == 0 {
            continue;
        }
        *totals.entry(i).or_default() += 1;
        if t != 0 {
            *counts.entry(i).or_default().entry(t).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .filter_map(|(i, c)| {
            let (&t, &n) = c.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))?;
            (n as f64 >= min_fraction * totals[&i] as f64).then_some((i, t))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cv_examples() {
        assert_eq!(cv(&[1.0; 4]).unwrap(), 0.0);
        assert!((cv(&[0.9, 1.1]).unwrap() - 0.141421356).abs() < 1e-6);
        assert!(cv(&[1.0, -1.0]).is_err());
        assert!(cv(&[1.0]).is_err());
    }

    #[test]
    fn consistency_examples() {
        assert_eq!(consistency_fit(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap(), 2.0);
        assert!((consistency_fit(&[1.0, 2.0], &[2.0, 5.0]).unwrap() - 2.4).abs() < 1e-12);
        assert!(consistency_fit(&[0.0, 0.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn feasibility_arithmetic() {
        let mut p = ScanProtocol::preset_3x3();
        p.dt_fundamental_ms = 3.0;
        let r = protocol_feasibility(2.0, 2.0, &p);
        assert!((r.short_saturation - 0.9975).abs() < 5e-5);
        assert!(!r.short_ok);
        p.dt_fundamental_ms = 1.5;
        let r = protocol_feasibility(2.0, 2.0, &p);
        assert!((r.short_saturation - (1.0 - (-3.0f64).exp())).abs() < 1e-15);
        assert!((r.short_saturation - 0.9502).abs() < 5e-5);
        assert!(!r.short_ok);
        let r = protocol_feasibility(0.3, 2.5, &ScanProtocol::preset_3x3());
        assert!(r.short_ok && r.long_ok && r.pass());
    }

    #[test]
    fn uniform_map_regions() {
        let map = Grid::filled(21, 21, 0.9f32);
        let skel = Grid::filled(21, 21, 1u8);
        let regions = quadrant_masks(21, 21, (10.0, 10.0), 10.0, true);
        let s = region_stats(&map, &regions, &skel).unwrap();
        assert!(s.iter().all(|r| (r.mean - 0.9).abs() < 1e-6));
    }

    #[test]
    fn quadrants_partition_the_disc() {
        let regions = quadrant_masks(31, 31, (15.0, 15.0), 12.0, false);
        let map = Grid::from_vec(31, 31, (0..961).map(|i| (i % 17) as f32).collect()).unwrap();
        let skel = Grid::filled(31, 31, 1u8);
        let mut cover = vec![0u8; 961];
        for r in &regions {
            for (c, m) in cover.iter_mut().zip(&r.mask.data) {
                *c += m;
            }
        }
        assert!(cover.iter().all(|&c| c <= 1));
        let s = region_stats(&map, &regions, &skel).unwrap();
        let total: usize = s[..4].iter().map(|r| r.n_pixels).sum();
        let weighted: f64 = s[..4].iter().map(|r| r.mean * r.n_pixels as f64).sum::<f64>() / total as f64;
        assert_eq!(s[4].n_pixels, total);
        assert!((weighted - s[4].mean).abs() < 1e-9);
    }

    #[test]
    fn truth_matching_majority() {
        let ids = [1, 1, 1, 2, 2, 0];
        let truth = [5, 5, 6, 7, 0, 9];
        let m = match_by_truth(&ids, &truth, 0.5);
        assert_eq!(m.get(&1), Some(&5));
        assert_eq!(m.get(&2), Some(&7));
    }
}
