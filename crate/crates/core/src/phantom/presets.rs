//! Ready-made phantom geometry: a layered retina with two capillary plexuses.

use super::{LayerSpec, PhantomSpec, VesselSpec};
use crate::protocol::ScanProtocol;

/// Planar retinal layers (depths in µm from the volume top).
pub fn retina_layers() -> Vec<LayerSpec> {
    let layer = |name: &str, top: f64, bottom: f64, r: f64| LayerSpec {
        name: name.into(),
        depth_um: top,
        thickness_um: bottom - top,
        reflectivity: r,
        tilt_x: 0.0,
        tilt_y: 0.0,
    };
    vec![
        layer("rnfl", 25.0, 55.0, 1.5),
        layer("gcl_ipl", 55.0, 110.0, 0.8),
        layer("inl", 110.0, 140.0, 0.35),
        layer("opl", 140.0, 150.0, 1.0),
        layer("onl", 150.0, 235.0, 0.55),
        layer("rpe", 240.0, 255.0, 3.0),
        layer("choroid", 255.0, 324.0, 1.0),
    ]
}

/// Straight capillaries in two plexuses, all running along the slow axis.
/// Superficial and deep tubes alternate in x, so their en-face footprints
/// never merge and every slow-axis band crosses every tube.
#[derive(Debug, Clone, PartialEq)]
pub struct CapillaryLayout {
    pub scp_depth_um: f64,
    pub dcp_depth_um: f64,
    pub radius_um: f64,
    /// Tubes per plexus.
    pub rows: usize,
    /// Distance kept free at both tube ends.
    pub margin_um: f64,
    /// Cycled over the tubes of each plexus.
    pub scp_alphas: Vec<f64>,
    pub dcp_alphas: Vec<f64>,
    pub dynamic_fraction: f64,
}

impl Default for CapillaryLayout {
    fn default() -> Self {
        CapillaryLayout {
            scp_depth_um: 80.0,
            dcp_depth_um: 145.0,
            radius_um: 12.0,
            rows: 10,
            margin_um: 40.0,
            scp_alphas: vec![0.3, 0.7, 1.2, 2.0],
            dcp_alphas: vec![1.2, 2.0, 0.3, 0.7],
            dynamic_fraction: 0.5,
        }
    }
}

/// Superficial tubes first (IDs `1..=rows`), then deep tubes.
pub fn capillary_rows(extent_um: [f64; 3], layout: &CapillaryLayout) -> Vec<VesselSpec> {
    let mut out = Vec::new();
    let [ex, ey, _] = extent_um;
    let m = layout.margin_um;
    for k in 0..layout.rows {
        if layout.scp_alphas.is_empty() {
            break;
        }
        let x = ex * (k as f64 + 0.25) / layout.rows as f64;
        out.push(VesselSpec {
            centerline: vec![[x, m, layout.scp_depth_um], [x, ey - m, layout.scp_depth_um]],
            radius_um: layout.radius_um,
            alpha0: layout.scp_alphas[k % layout.scp_alphas.len()],
            dynamic_fraction: layout.dynamic_fraction,
        });
    }
    for k in 0..layout.rows {
        if layout.dcp_alphas.is_empty() {
            break;
        }
        let x = ex * (k as f64 + 0.75) / layout.rows as f64;
        out.push(VesselSpec {
            centerline: vec![[x, m, layout.dcp_depth_um], [x, ey - m, layout.dcp_depth_um]],
            radius_um: layout.radius_um,
            alpha0: layout.dcp_alphas[k % layout.dcp_alphas.len()],
            dynamic_fraction: layout.dynamic_fraction,
        });
    }
    out
}

impl PhantomSpec {
    /// Layered retina with the given capillary layout, noise σ = 0.2 and
    /// 324 µm of depth.
    pub fn retina(protocol: ScanProtocol, layout: &CapillaryLayout, seed: u64) -> Self {
        let mut spec = PhantomSpec::new(protocol, 324.0, seed);
        spec.layers = retina_layers();
        spec.noise_sigma = 0.2;
        spec.vessels = capillary_rows(spec.extent_um(), layout);
        spec
    }
}
