//! End-to-end run: OCTA, layers, vessels, fits, pulsatility, images, reports.

use crate::analysis::{quadrant_masks, region_stats, RegionStat};
use crate::config::{LayersConfig, OctaConfig, PipelineConfig, VesselsConfig};
use crate::container::{self, Semantic};
use crate::fit::{fit_segments, fmt_num, paint_labels, paint_links, SegmentFit};
use crate::layers::{evaluate_slab, load_overrides, segment_layers, SlabBounds, SlabSpec};
use crate::octa::{apply_shifts, octa_stack, register_bscans, Registration};
use crate::phantom::{build_phantom, PhantomSpec, PhantomTruth};
use crate::pulse::{band_pulsatility, compensate, segment_means, PulseTrace};
use crate::render::{enface, vista_image, write_with_sidecar, Reducer, RenderInfo, RgbImage};
use crate::vessels::{enface_vessels, mask_3d, offset_ids, oof_response, project_ids_into, tubular_gate, EnfaceVessels};
use crate::volume::{Grid, LayerSurfaces, OctVolume, OctaStack, Volume};
use crate::{Error, Result};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Per-slab products.
#[derive(Debug, Clone)]
pub struct SlabResult {
    pub name: String,
    pub bounds: SlabBounds,
    /// Mean unnormalized OCTA over the slab.
    pub enface: Grid<f32>,
    pub vessels: EnfaceVessels,
    /// Segment α on skeleton pixels, before and after compensation.
    pub alpha: Grid<f32>,
    pub alpha_compensated: Grid<f32>,
    /// Compensated per-segment α̂₀ (mean over skeleton pixels).
    pub segment_alpha0: BTreeMap<u32, f64>,
    pub regions: Vec<RegionStat>,
    pub image: RgbImage,
    pub render_info: RenderInfo,
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub stack: OctaStack,
    pub registration: Option<Registration>,
    pub surfaces: LayerSurfaces,
    pub oof_mask: Volume<u8>,
    pub ids: Volume<u32>,
    pub fits: Vec<SegmentFit>,
    pub pulse: Option<PulseTrace>,
    pub slabs: Vec<SlabResult>,
}

impl PipelineResult {
    /// Slab name owning a segment ID.
    pub fn slab_of(&self, id: u32) -> Option<&str> {
        self.slabs
            .iter()
            .find(|s| s.vessels.graph.link(id).is_some() || s.vessels.graph.links.iter().any(|l| l.id == id))
            .map(|s| s.name.as_str())
    }
}

/// 3D vessel mask from the mean unnormalized OCTA, spacing `(y, x, z)` µm.
pub fn vessel_mask_3d(mean: &Volume<f32>, spacing_um: [f64; 3], cfg: &VesselsConfig) -> Result<Volume<u8>> {
    let dx = spacing_um[1];
    let oof = oof_response(mean, spacing_um, cfg.oof_radius_factor * dx, cfg.oof_sigma_um.unwrap_or(dx))?;
    Ok(mask_3d(&tubular_gate(&oof, cfg.oof_min_eig_ratio)).0)
}

/// Slab preset by name with the configured offsets.
pub fn slab_spec(name: &str, cfg: &LayersConfig) -> Result<SlabSpec> {
    match name {
        "rnflp" => Ok(SlabSpec::rnflp(cfg.rnflp_offset_um)),
        "dcp" => Ok(SlabSpec::dcp(cfg.dcp_rpe_offset_um)),
        other => SlabSpec::preset(other),
    }
}

/// Reads or synthesizes the input volume.
pub fn load_input(cfg: &PipelineConfig) -> Result<(OctVolume, Option<PhantomTruth>)> {
    match (&cfg.input.phantom, &cfg.input.volume) {
        (Some(p), None) => {
            let mut spec = PhantomSpec::load(p)?;
            if let Some(seed) = cfg.input.seed {
                spec.seed = seed;
            }
            let (vol, truth) = build_phantom(&spec)?;
            Ok((vol, Some(truth)))
        }
        (None, Some(v)) => Ok((container::read_volume(v)?, None)),
        _ => Err(Error::Config("set exactly one of input.phantom or input.volume".into())),
    }
}

/// Registers adjacent B-scans on mean unnormalized OCTA and moves every
/// stack volume and `structural` accordingly.
pub fn register_stack(stack: &mut OctaStack, structural: &mut Volume<f32>, cfg: &OctaConfig) -> Result<Option<Registration>> {
    if !cfg.register || stack.dims().0 < 2 {
        return Ok(None);
    }
    let mut reg = register_bscans(&stack.mean_unnormalized(), cfg.upsample, cfg.min_gain)?;
    // Sub-threshold estimates are noise; dropping them avoids random-walk drift.
    let small = |d: f64| if d.abs() < cfg.min_shift_px { 0.0 } else { d };
    let (mut cx, mut cz) = (0.0, 0.0);
    for (p, c) in reg.pairwise.iter_mut().zip(reg.cumulative.iter_mut()) {
        *p = (small(p.0), small(p.1));
        cx += p.0;
        cz += p.1;
        *c = (cx, cz);
    }
    if reg.cumulative.iter().all(|&(x, z)| x == 0.0 && z == 0.0) {
        return Ok(Some(reg));
    }
    for v in stack.unnormalized.iter_mut().chain(stack.normalized.iter_mut()) {
        *v = apply_shifts(v, &reg.cumulative)?.0;
    }
    *structural = apply_shifts(structural, &reg.cumulative)?.0;
    Ok(Some(reg))
}

/// Runs every stage on an in-memory volume.
pub fn run_volume(vol: &OctVolume, cfg: &PipelineConfig) -> Result<PipelineResult> {
    let p = vol.protocol.clone();
    p.ensure_valid()?;
    let dz = p.axial_spacing_um;
    let (dy, dx) = (p.bscan_spacing_um(), p.ascan_spacing_um);

    log::info!("octa: computing {} interscan times", p.n_repeats - 1);
    let mut stack = octa_stack(vol, cfg.octa.mode)?;
    let mut structural = vol.structural();
    let registration = register_stack(&mut stack, &mut structural, &cfg.octa)?;
    stack.check()?;

    log::info!("layers: segmenting surfaces");
    let overrides = match &cfg.layers.overrides {
        Some(path) => load_overrides(path)?,
        None => Vec::new(),
    };
    let surfaces = segment_layers(&structural, &p, &cfg.layers.segment, &overrides)?.surfaces;

    let mean = stack.mean_unnormalized();
    let (ny, nx, nz) = mean.dims();
    log::info!("vessels: optimally oriented flux");
    let oof_mask = vessel_mask_3d(&mean, [dy, dx, dz], &cfg.vessels)?;

    let scales: Vec<f64> = cfg.vessels.vesselness.scale_factors.iter().map(|f| f * dx).collect();
    let mut ids = Volume::filled(ny, nx, nz, 0u32);
    let mut partial = Vec::new();
    let mut offset = 0u32;
    for name in &cfg.vessels.slabs {
        let spec = slab_spec(name, &cfg.layers)?;
        let bounds = evaluate_slab(&spec, &surfaces, dz, nz);
        let ef = enface(&mean, &bounds, Reducer::Mean)?;
        let mut ev = enface_vessels(&ef, &scales, (dy, dx), &cfg.vessels.vesselness, cfg.vessels.min_spur_px)?;
        offset_ids(&mut ev, offset);
        offset += ev.graph.links.len() as u32;
        project_ids_into(&mut ids, &ev.ids, &oof_mask, &bounds)?;
        log::info!("vessels: slab {name}: {} segments", ev.graph.links.len());
        partial.push((name.clone(), bounds, ef, ev));
    }

    log::info!("fit: decay per segment");
    let fits = fit_segments(&ids, &stack, cfg.fit.n_min, &cfg.fit.bounds)?;

    let pulse = if cfg.pulse.enabled {
        match band_pulsatility(&ids, &stack, &cfg.pulse.config, &cfg.fit.bounds) {
            Ok(t) => Some(t),
            Err(e) => {
                log::warn!("pulsatility skipped: {e}");
                None
            }
        }
    } else {
        None
    };
    let g_rep = pulse.as_ref().map(|t| t.g_rep.clone()).unwrap_or_else(|| vec![0.0; ny]);

    let center = cfg
        .analysis
        .center_um
        .map(|(cy, cx)| (cy / dy, cx / dx))
        .unwrap_or(((ny as f64 - 1.0) / 2.0, (nx as f64 - 1.0) / 2.0));
    let radius_px = cfg.analysis.eccentricity_um / dx.min(dy);
    let regions = quadrant_masks(ny, nx, center, radius_px, cfg.analysis.nasal_right);

    let mut slabs = Vec::new();
    for (name, bounds, ef, ev) in partial {
        let alpha = paint_links(&fits, &ev.graph);
        let (alpha_compensated, bad) = compensate(&alpha, &g_rep)?;
        if !bad.is_empty() {
            log::warn!("slab {name}: {} rows left uncompensated", bad.len());
        }
        let segment_alpha0 = segment_means(&alpha_compensated, &ev.graph);
        let skeleton = ev.graph.link_image().map(|&i| u8::from(i != 0));
        let stats = region_stats(&alpha_compensated, &regions, &skeleton).unwrap_or_else(|e| {
            log::warn!("slab {name}: region statistics skipped: {e}");
            Vec::new()
        });
        let per_segment: Vec<SegmentFit> = fits
            .iter()
            .filter_map(|f| {
                segment_alpha0.get(&f.id).map(|&a| SegmentFit {
                    id: f.id,
                    fit: crate::fit::DecayFit { alpha: a, ..f.fit },
                })
            })
            .collect();
        let label_alpha = paint_labels(&per_segment, &ev.ids);
        let (image, render_info) = vista_image(&label_alpha, &ef, &cfg.render)?;
        slabs.push(SlabResult {
            name,
            bounds,
            enface: ef,
            vessels: ev,
            alpha,
            alpha_compensated,
            segment_alpha0,
            regions: stats,
            image,
            render_info,
        });
    }

    Ok(PipelineResult {
        stack,
        registration,
        surfaces,
        oof_mask,
        ids,
        fits,
        pulse,
        slabs,
    })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))
}

fn csv_row(w: &mut csv::Writer<std::fs::File>, path: &Path, row: &[String]) -> Result<()> {
    w.write_record(row).map_err(|e| Error::io(path, e.into()))
}

/// Writes reports, images and volumes into `dir`; returns the files written.
pub fn write_outputs(res: &PipelineResult, truth: Option<&PhantomTruth>, cfg: &PipelineConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let protocol = &res.stack.protocol;
    let mut files = Vec::new();

    let seg_path = dir.join("segments.csv");
    let mut w = csv_writer(&seg_path)?;
    csv_row(&mut w, &seg_path, &["id", "slab", "alpha", "beta", "residual", "n_voxels", "status", "alpha0"].map(String::from))?;
    for f in &res.fits {
        let slab = res.slabs.iter().find(|s| s.vessels.graph.links.iter().any(|l| l.id == f.id));
        let a0 = slab.and_then(|s| s.segment_alpha0.get(&f.id)).copied().unwrap_or(f64::NAN);
        csv_row(
            &mut w,
            &seg_path,
            &[
                f.id.to_string(),
                slab.map(|s| s.name.clone()).unwrap_or_default(),
                fmt_num(f.fit.alpha),
                fmt_num(f.fit.beta),
                fmt_num(f.fit.residual),
                f.fit.n_voxels.to_string(),
                f.fit.status.as_str().to_string(),
                fmt_num(a0),
            ],
        )?;
    }
    w.flush().map_err(|e| Error::io(&seg_path, e))?;
    files.push(seg_path);

    let reg_path = dir.join("regions.csv");
    let mut w = csv_writer(&reg_path)?;
    csv_row(&mut w, &reg_path, &["slab", "region", "mean_alpha0", "n_pixels"].map(String::from))?;
    for s in &res.slabs {
        for r in &s.regions {
            csv_row(&mut w, &reg_path, &[s.name.clone(), r.name.clone(), fmt_num(r.mean), r.n_pixels.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(&reg_path, e))?;
    files.push(reg_path);

    if let Some(t) = &res.pulse {
        let p = dir.join("pulse.csv");
        t.write_csv(&p)?;
        files.push(p);
    }

    if let Some(truth) = truth {
        let p = dir.join("truth_match.csv");
        let m = crate::analysis::match_by_truth(&res.ids.data, &truth.ids.data, 0.5);
        let mut w = csv_writer(&p)?;
        csv_row(&mut w, &p, &["id", "truth_id", "alpha0_true"].map(String::from))?;
        for (id, t) in m {
            let a = truth.segment(t).map(|s| s.alpha0).unwrap_or(f64::NAN);
            csv_row(&mut w, &p, &[id.to_string(), t.to_string(), fmt_num(a)])?;
        }
        w.flush().map_err(|e| Error::io(&p, e))?;
        files.push(p);
    }

    let p = dir.join("surfaces.vvol");
    container::write_surfaces(&p, &res.surfaces, Some(protocol))?;
    files.push(p);
    let p = dir.join("ids.vvol");
    container::write_ids(&p, &res.ids, Some(protocol))?;
    files.push(p);

    for s in &res.slabs {
        let p = dir.join(format!("{}_graph.json", s.name));
        std::fs::write(&p, s.vessels.graph.to_json() + "\n").map_err(|e| Error::io(&p, e))?;
        files.push(p);
        let p = dir.join(format!("{}_alpha.vvol", s.name));
        container::write_grid(&p, &s.alpha_compensated, Semantic::Alpha, Some(protocol))?;
        files.push(p);
        let p = dir.join(format!("{}_enface.vvol", s.name));
        container::write_grid(&p, &s.enface, Semantic::Enface, Some(protocol))?;
        files.push(p);
        let p = dir.join(format!("{}_ids.vvol", s.name));
        container::write_id_image(&p, &s.vessels.ids)?;
        files.push(p);
        let p = dir.join(format!("{}_vista.png", s.name));
        write_with_sidecar(&s.image, &s.render_info, &p)?;
        files.push(p.clone());
        files.push(p.with_extension("json"));
    }

    if cfg.output.save_volumes {
        let p = dir.join("stack");
        container::write_stack(&p, &res.stack)?;
        files.push(p);
        let p = dir.join("oof_mask.vvol");
        container::write_mask(&p, &res.oof_mask, Some(protocol))?;
        files.push(p);
    }
    Ok(files)
}

/// Loads the input, runs the pipeline and writes all outputs.
pub fn run(cfg: &PipelineConfig, out_dir: &Path) -> Result<(PipelineResult, Vec<PathBuf>)> {
    let (vol, truth) = load_input(cfg)?;
    let res = run_volume(&vol, cfg)?;
    let files = write_outputs(&res, truth.as_ref(), cfg, out_dir)?;
    Ok((res, files))
}
