//! Thinning, skeleton graphs and nearest-link labelling of 2D vessel masks.

use crate::volume::Grid;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

const OFFS: [(i64, i64); 8] = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)];

fn ring(m: &Grid<u8>, y: usize, x: usize) -> [bool; 8] {
    let mut r = [false; 8];
    for (k, (dy, dx)) in OFFS.iter().enumerate() {
        let (yy, xx) = (y as i64 + dy, x as i64 + dx);
        if yy >= 0 && xx >= 0 && (yy as usize) < m.ny && (xx as usize) < m.nx {
            r[k] = *m.get(yy as usize, xx as usize) != 0;
        }
    }
    r
}

/// Zhang–Suen thinning followed by removal of remaining simple
/// non-end pixels, giving an 8-connected skeleton one pixel wide.
pub fn thin(mask: &Grid<u8>) -> Grid<u8> {
    let mut m = mask.map(|&v| u8::from(v != 0));
    let (ny, nx) = m.dims();
    loop {
        let mut changed = false;
        for step in 0..2 {
            let mut del = Vec::new();
            for y in 0..ny {
                for x in 0..nx {
                    if *m.get(y, x) == 0 {
                        continue;
                    }
                    let p = ring(&m, y, x);
                    let b = p.iter().filter(|&&v| v).count();
                    if !(2..=6).contains(&b) {
                        continue;
                    }
                    let a = (0..8).filter(|&k| !p[k] && p[(k + 1) % 8]).count();
                    if a != 1 {
                        continue;
                    }
                    // P2 = north, P4 = east, P6 = south, P8 = west.
                    let (n, e, s, w) = (p[0], p[2], p[4], p[6]);
                    let ok = if step == 0 {
                        !(n && e && s) && !(e && s && w)
                    } else {
                        !(n && e && w) && !(n && s && w)
                    };
                    if ok {
                        del.push((y, x));
                    }
                }
            }
            changed |= !del.is_empty();
            for (y, x) in del {
                m.set(y, x, 0);
            }
        }
        if !changed {
            break;
        }
    }
    loop {
        let mut changed = false;
        for y in 0..ny {
            for x in 0..nx {
                if *m.get(y, x) != 0 && removable(&ring(&m, y, x)) {
                    m.set(y, x, 0);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    m
}

fn ring_adjacent(a: usize, b: usize) -> bool {
    let (ay, ax) = OFFS[a];
    let (by, bx) = OFFS[b];
    (ay - by).abs() <= 1 && (ax - bx).abs() <= 1
}

fn components(members: &[usize], adj: impl Fn(usize, usize) -> bool) -> Vec<Vec<usize>> {
    let mut seen = vec![false; members.len()];
    let mut out = Vec::new();
    for s in 0..members.len() {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut comp = vec![members[s]];
        let mut stack = vec![s];
        while let Some(i) = stack.pop() {
            for j in 0..members.len() {
                if !seen[j] && adj(members[i], members[j]) {
                    seen[j] = true;
                    comp.push(members[j]);
                    stack.push(j);
                }
            }
        }
        out.push(comp);
    }
    out
}

/// Simple point that is not an end: removing it keeps both the foreground
/// (8-connected) and the background (4-connected) topology.
fn removable(p: &[bool; 8]) -> bool {
    let fg: Vec<usize> = (0..8).filter(|&k| p[k]).collect();
    if fg.len() < 2 {
        return false;
    }
    if components(&fg, ring_adjacent).len() != 1 {
        return false;
    }
    let bg: Vec<usize> = (0..8).filter(|&k| !p[k]).collect();
    let four = |a: usize, b: usize| {
        let (ay, ax) = OFFS[a];
        let (by, bx) = OFFS[b];
        (ay - by).abs() + (ax - bx).abs() == 1
    };
    components(&bg, four)
        .iter()
        .filter(|c| c.iter().any(|&k| k % 2 == 0))
        .count()
        == 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: u32,
    /// `(y, x)` pixels of this node cluster.
    pub pixels: Vec<(usize, usize)>,
    /// IDs of incident links (a self-loop appears twice).
    pub links: Vec<u32>,
}

impl Node {
    pub fn degree(&self) -> usize {
        self.links.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub id: u32,
    /// Ordered centerline pixels `(y, x)`, excluding node pixels.
    pub pixels: Vec<(usize, usize)>,
    pub start: u32,
    pub end: u32,
}

/// Skeleton graph: nodes are clusters of pixels with ≠ 2 skeleton
/// neighbours, links are the pixel chains between them. IDs start at 1.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VesselGraph {
    pub ny: usize,
    pub nx: usize,
    pub nodes: Vec<Node>,
    pub links: Vec<Link>,
}

impl VesselGraph {
    pub fn link(&self, id: u32) -> Option<&Link> {
        self.links.get((id as usize).checked_sub(1)?)
    }

    /// Skeleton pixels rebuilt from nodes and links.
    pub fn skeleton(&self) -> Grid<u8> {
        let mut g = Grid::filled(self.ny, self.nx, 0u8);
        for &(y, x) in self.nodes.iter().flat_map(|n| &n.pixels).chain(self.links.iter().flat_map(|l| &l.pixels)) {
            g.set(y, x, 1);
        }
        g
    }

    /// Link ID at every link pixel, 0 elsewhere.
    pub fn link_image(&self) -> Grid<u32> {
        let mut g = Grid::filled(self.ny, self.nx, 0u32);
        for l in &self.links {
            for &(y, x) in &l.pixels {
                g.set(y, x, l.id);
            }
        }
        g
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }
}

fn neighbours(s: &Grid<u8>, y: usize, x: usize) -> Vec<(usize, usize)> {
    OFFS.iter()
        .filter_map(|(dy, dx)| {
            let (yy, xx) = (y as i64 + dy, x as i64 + dx);
            (yy >= 0 && xx >= 0 && (yy as usize) < s.ny && (xx as usize) < s.nx && *s.get(yy as usize, xx as usize) != 0)
                .then_some((yy as usize, xx as usize))
        })
        .collect()
}

/// Graph of an already thin skeleton.
pub fn build_graph(skel: &Grid<u8>) -> VesselGraph {
    let (ny, nx) = skel.dims();
    let mut node_of = Grid::filled(ny, nx, 0u32);
    let mut nodes: Vec<Node> = Vec::new();
    for y in 0..ny {
        for x in 0..nx {
            if *skel.get(y, x) == 0 || *node_of.get(y, x) != 0 || neighbours(skel, y, x).len() == 2 {
                continue;
            }
            let id = nodes.len() as u32 + 1;
            let mut pixels = vec![(y, x)];
            node_of.set(y, x, id);
            let mut q = VecDeque::from([(y, x)]);
            while let Some((cy, cx)) = q.pop_front() {
                for (yy, xx) in neighbours(skel, cy, cx) {
                    if *node_of.get(yy, xx) == 0 && neighbours(skel, yy, xx).len() != 2 {
                        node_of.set(yy, xx, id);
                        pixels.push((yy, xx));
                        q.push_back((yy, xx));
                    }
                }
            }
            pixels.sort_unstable();
            nodes.push(Node { id, pixels, links: vec![] });
        }
    }

    let mut visited = Grid::filled(ny, nx, 0u8);
    let mut links: Vec<Link> = Vec::new();
    let trace = |start: (usize, usize), first: (usize, usize), visited: &mut Grid<u8>, stop: &dyn Fn((usize, usize)) -> bool| {
        let mut pixels = vec![first];
        visited.set(first.0, first.1, 1);
        let (mut prev, mut cur) = (start, first);
        loop {
            let next = neighbours(skel, cur.0, cur.1).into_iter().find(|&p| p != prev && (stop(p) || *visited.get(p.0, p.1) == 0));
            match next {
                Some(p) if stop(p) => return (pixels, Some(p)),
                Some(p) => {
                    visited.set(p.0, p.1, 1);
                    pixels.push(p);
                    prev = cur;
                    cur = p;
                }
                None => return (pixels, None),
            }
        }
    };

    for node in &nodes {
        for &(y, x) in &node.pixels {
            for p in neighbours(skel, y, x) {
                if *node_of.get(p.0, p.1) != 0 || *visited.get(p.0, p.1) != 0 {
                    continue;
                }
                let (pixels, end) = trace((y, x), p, &mut visited, &|q| *node_of.get(q.0, q.1) != 0);
                let end = end.map(|q| *node_of.get(q.0, q.1)).unwrap_or(node.id);
                links.push(Link {
                    id: links.len() as u32 + 1,
                    pixels,
                    start: node.id,
                    end,
                });
            }
        }
    }

    // Whatever is left are pure cycles: anchor each at its first pixel.
    for y in 0..ny {
        for x in 0..nx {
            if *skel.get(y, x) == 0 || *node_of.get(y, x) != 0 || *visited.get(y, x) != 0 {
                continue;
            }
            let id = nodes.len() as u32 + 1;
            node_of.set(y, x, id);
            nodes.push(Node { id, pixels: vec![(y, x)], links: vec![] });
            if let Some(&p) = neighbours(skel, y, x).first() {
                let anchor = (y, x);
                let (pixels, _) = trace(anchor, p, &mut visited, &|q| q == anchor);
                links.push(Link {
                    id: links.len() as u32 + 1,
                    pixels,
                    start: id,
                    end: id,
                });
            }
        }
    }

    for l in &links {
        nodes[l.start as usize - 1].links.push(l.id);
        nodes[l.end as usize - 1].links.push(l.id);
    }
    VesselGraph { ny, nx, nodes, links }
}

/// Thins the mask, builds the graph and prunes end spurs shorter than
/// `min_spur_px` that hang off a junction, and free-standing fragments of
/// the same length.
pub fn skeletonize_graph(mask: &Grid<u8>, min_spur_px: usize) -> VesselGraph {
    let mut skel = thin(mask);
    for _ in 0..16 {
        let g = build_graph(&skel);
        let mut pruned = false;
        for l in &g.links {
            let (a, b) = (&g.nodes[l.start as usize - 1], &g.nodes[l.end as usize - 1]);
            let spur_end = if a.degree() == 1 && b.degree() >= 3 {
                Some(a)
            } else if b.degree() == 1 && a.degree() >= 3 {
                Some(b)
            } else {
                None
            };
            if let Some(end) = spur_end {
                if l.pixels.len() + end.pixels.len() < min_spur_px {
                    for &(y, x) in l.pixels.iter().chain(&end.pixels) {
                        skel.set(y, x, 0);
                    }
                    pruned = true;
                }
            } else if a.degree() == 1 && b.degree() == 1 && l.pixels.len() + a.pixels.len() + b.pixels.len() < min_spur_px {
                for &(y, x) in l.pixels.iter().chain(&a.pixels).chain(&b.pixels) {
                    skel.set(y, x, 0);
                }
                pruned = true;
            }
        }
        if !pruned {
            return g;
        }
        skel = thin(&skel);
    }
    build_graph(&skel)
}

fn mask_components(mask: &Grid<u8>) -> Grid<u32> {
    let (ny, nx) = mask.dims();
    let mut lab = Grid::filled(ny, nx, 0u32);
    let mut next = 0;
    for y in 0..ny {
        for x in 0..nx {
            if *mask.get(y, x) == 0 || *lab.get(y, x) != 0 {
                continue;
            }
            next += 1;
            lab.set(y, x, next);
            let mut q = vec![(y, x)];
            while let Some((cy, cx)) = q.pop() {
                for (yy, xx) in neighbours(mask, cy, cx) {
                    if *lab.get(yy, xx) == 0 {
                        lab.set(yy, xx, next);
                        q.push((yy, xx));
                    }
                }
            }
        }
    }
    lab
}

/// Segment ID for every mask pixel: the ID of the nearest link pixel in the
/// same connected component (Euclidean, ties to the lower ID). Pixels whose
/// component has no link stay 0.
pub fn assign_ids(mask: &Grid<u8>, graph: &VesselGraph) -> Grid<u32> {
    let (ny, nx) = mask.dims();
    let links = graph.link_image();
    let comp = mask_components(mask);
    let mut out = Grid::filled(ny, nx, 0u32);
    let reach = ny.max(nx);
    for y in 0..ny {
        for x in 0..nx {
            if *mask.get(y, x) == 0 {
                continue;
            }
            let c = *comp.get(y, x);
            let mut best: Option<(usize, u32)> = None;
            for r in 0..reach {
                if let Some((d2, _)) = best {
                    if r * r > d2 {
                        break;
                    }
                }
                let (y0, y1) = (y.saturating_sub(r), (y + r).min(ny - 1));
                let (x0, x1) = (x.saturating_sub(r), (x + r).min(nx - 1));
                for yy in y0..=y1 {
                    for xx in x0..=x1 {
                        let on_ring = yy.abs_diff(y) == r || xx.abs_diff(x) == r;
                        let id = *links.get(yy, xx);
                        if !on_ring || id == 0 || *comp.get(yy, xx) != c {
                            continue;
                        }
                        let d2 = yy.abs_diff(y).pow(2) + xx.abs_diff(x).pow(2);
                        if best.is_none_or(|(bd, bid)| d2 < bd || (d2 == bd && id < bid)) {
                            best = Some((d2, id));
                        }
                    }
                }
                if y0 == 0 && x0 == 0 && y1 == ny - 1 && x1 == nx - 1 && best.is_none() {
                    break;
                }
            }
            if let Some((_, id)) = best {
                out.set(y, x, id);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draw(ny: usize, nx: usize, f: impl Fn(f64, f64) -> bool) -> Grid<u8> {
        Grid::from_vec(ny, nx, (0..ny * nx).map(|i| u8::from(f((i / nx) as f64, (i % nx) as f64))).collect()).unwrap()
    }

    fn check_partition(g: &VesselGraph, skel: &Grid<u8>) {
        let mut count = Grid::filled(g.ny, g.nx, 0u8);
        for &(y, x) in g.nodes.iter().flat_map(|n| &n.pixels).chain(g.links.iter().flat_map(|l| &l.pixels)) {
            count.data[y * g.nx + x] += 1;
        }
        assert!(count.data.iter().all(|&c| c <= 1));
        assert_eq!(&count, skel);
    }

    #[test]
    fn bar_is_one_link() {
        let m = draw(20, 50, |y, x| (8.0..13.0).contains(&y) && (5.0..45.0).contains(&x));
        let g = skeletonize_graph(&m, 5);
        assert_eq!(g.links.len(), 1, "{}", g.to_json());
        assert_eq!(g.nodes.len(), 2);
        assert!(g.nodes.iter().all(|n| n.degree() == 1));
        let ids = assign_ids(&m, &g);
        for i in 0..m.data.len() {
            assert_eq!(ids.data[i], u32::from(m.data[i]));
        }
        check_partition(&g, &g.skeleton());
    }

    #[test]
    fn short_fragment_is_dropped() {
        let m = draw(20, 50, |y, x| ((8.0..13.0).contains(&y) && (5.0..45.0).contains(&x)) || (y == 17.0 && (20.0..23.0).contains(&x)));
        let g = skeletonize_graph(&m, 5);
        assert_eq!(g.links.len(), 1, "{}", g.to_json());
        assert!(g.links[0].pixels.iter().all(|&(y, _)| y < 15));
    }

    #[test]
    fn y_shape() {
        let m = draw(60, 60, |y, x| {
            let stem = (x - 30.0).abs() <= 1.0 && (30.0..55.0).contains(&y);
            let arm = |s: f64| y <= 30.0 && y > 5.0 && ((x - 30.0) - s * (30.0 - y)).abs() <= 1.0;
            stem || arm(1.0) || arm(-1.0)
        });
        let g = skeletonize_graph(&m, 5);
        assert_eq!(g.links.len(), 3, "{}", g.to_json());
        let deg: Vec<usize> = g.nodes.iter().map(|n| n.degree()).collect();
        assert_eq!(deg.iter().filter(|&&d| d == 3).count(), 1);
        assert_eq!(deg.iter().filter(|&&d| d == 1).count(), 3);
        let ids = assign_ids(&m, &g);
        let mut seen: Vec<u32> = ids.data.iter().copied().filter(|&i| i > 0).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen, vec![1, 2, 3]);
    }

    #[test]
    fn ring_is_a_self_loop() {
        let m = draw(40, 40, |y, x| {
            let r = ((y - 20.0).powi(2) + (x - 20.0).powi(2)).sqrt();
            (9.0..12.0).contains(&r)
        });
        let g = skeletonize_graph(&m, 5);
        assert_eq!(g.links.len(), 1);
        assert_eq!(g.links[0].start, g.links[0].end);
        // One component with one hole: V − E = 1 − 1.
        assert_eq!(g.nodes.len() as i64 - g.links.len() as i64, 0);
        check_partition(&g, &thin(&m));
    }

    #[test]
    fn empty_mask() {
        let g = skeletonize_graph(&Grid::filled(10, 10, 0), 5);
        assert!(g.nodes.is_empty() && g.links.is_empty());
    }

    #[test]
    fn ties_go_to_lower_id() {
        let mut skel = Grid::filled(5, 5, 0u8);
        for x in 0..5 {
            skel.set(0, x, 1);
            skel.set(4, x, 1);
        }
        let g = build_graph(&skel);
        assert_eq!(g.links.len(), 2);
        let ids = assign_ids(&Grid::filled(5, 5, 1), &g);
        assert_eq!(*ids.get(2, 2), 1);
    }

    #[test]
    fn json_round_trip() {
        let m = draw(20, 50, |y, x| (8.0..13.0).contains(&y) && (5.0..45.0).contains(&x));
        let g = skeletonize_graph(&m, 5);
        let back: VesselGraph = serde_json::from_str(&g.to_json()).unwrap();
        assert_eq!(back, g);
    }
}
