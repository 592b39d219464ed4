//! `vista` command line: stage-by-stage tools and the full pipeline.

mod manifest;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use vista::analysis::{consistency_fit, cv, protocol_feasibility};
use vista::config::PipelineConfig;
use vista::container::{self, Semantic};
use vista::fit::{fit_cuboids, fit_segments, fmt_num, paint_labels, write_fits_csv};
use vista::layers::{evaluate_slab, load_overrides, segment_layers};
use vista::octa::{octa_stack, OctaMode};
use vista::phantom::{write_phantom, PhantomSpec};
use vista::pipeline::{register_stack, run, slab_spec, vessel_mask_3d};
use vista::pulse::{band_pulsatility, compensate, mmode_alpha_series};
use vista::render::{enface, vista_image, write_with_sidecar, Reducer};
use vista::vessels::{enface_vessels, project_ids};
use vista::{Grid, ScanProtocol, Volume};

use manifest::Manifest;

#[derive(Parser)]
#[command(name = "vista", version, about = "Variable interscan time analysis for OCT angiography")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "VISTA_THREADS")]
    threads: Option<usize>,
    /// Pipeline config supplying stage tunables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a phantom volume with ground-truth sidecars.
    Phantom {
        spec: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// OCTA stack at every interscan time, with B-scan registration.
    Octa {
        volume: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long)]
        no_register: bool,
    },
    /// Retinal surfaces and slab en-face images.
    Layers {
        volume: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        overrides: Option<PathBuf>,
        /// OCTA stack for slab en-face images.
        #[arg(long)]
        stack: Option<PathBuf>,
    },
    /// Vessel graph, 3D flux mask and segment ID volume for one slab.
    Vessels {
        enface: PathBuf,
        stack: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[command(flatten)]
        slab: SlabArgs,
    },
    /// Per-segment decay fits, or per-cuboid fits with `--cuboid`.
    Fit {
        ids: PathBuf,
        stack: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Cuboid size in µm as `fast x slow x axial`, e.g. 53x53x8.
        #[arg(long, value_parser = parse_cuboid)]
        cuboid: Option<(f64, f64, f64)>,
        #[command(flatten)]
        slab: SlabArgs,
    },
    /// Pulsatility trace, and a compensated α map when `--alpha` is given.
    Pulse {
        ids: PathBuf,
        stack: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        alpha: Option<PathBuf>,
        /// Repeated-B-scan dataset: track vessel cross sections over time.
        #[arg(long)]
        mmode: bool,
    },
    /// VISTA color image from an α map and an en-face image.
    Render {
        alpha: PathBuf,
        enface: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// α range mapped onto the hue ramp, `lo:hi` in ms⁻¹.
        #[arg(long, value_parser = parse_range)]
        range: Option<(f64, f64)>,
    },
    /// Quantitative reports.
    Analyze {
        #[command(subcommand)]
        what: Analyze,
    },
    /// Full pipeline from a config file.
    Run {
        #[arg(value_name = "CONFIG")]
        file: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Subcommand)]
enum Analyze {
    /// Saturation bounds of a protocol for an expected α range.
    Feasibility {
        #[arg(long, value_parser = parse_range)]
        alpha: (f64, f64),
        #[arg(long, default_value = "3x3")]
        protocol: String,
    },
    /// Per-key coefficient of variation across repeated runs.
    Cv {
        /// `segments.csv` or `regions.csv` files, one per repeat.
        files: Vec<PathBuf>,
        #[arg(long, default_value = "alpha0")]
        column: String,
    },
    /// Slope of y = kx between two runs matched by key.
    Consistency {
        x: PathBuf,
        y: PathBuf,
        #[arg(long, default_value = "mean_alpha0")]
        column: String,
    },
}

#[derive(Args)]
struct SlabArgs {
    /// Surfaces from `layers`; without them the slab is the full depth.
    #[arg(long)]
    surfaces: Option<PathBuf>,
    #[arg(long, default_value = "scp_icp")]
    slab: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Amplitude,
    Complex,
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or("expected lo:hi")?;
    let lo: f64 = a.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = b.trim().parse().map_err(|e| format!("{e}"))?;
    if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
        return Err("lo must be below hi".into());
    }
    Ok((lo, hi))
}

fn parse_cuboid(s: &str) -> Result<(f64, f64, f64), String> {
    let v: Vec<f64> = s
        .split(['x', 'X'])
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [a, b, c] if a > 0.0 && b > 0.0 && c > 0.0 => Ok((a, b, c)),
        _ => Err("expected three positive sizes like 53x53x8".into()),
    }
}

/// Missing inputs are usage errors (exit 2).
struct MissingInput(PathBuf);

fn need(paths: &[&Path]) -> Result<(), MissingInput> {
    match paths.iter().find(|p| !p.exists()) {
        Some(p) => Err(MissingInput(p.to_path_buf())),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let inputs = inputs_of(&cli);
    if let Err(MissingInput(p)) = need(&inputs.iter().map(PathBuf::as_path).collect::<Vec<_>>()) {
        eprintln!("error: input not found: {}", p.display());
        return ExitCode::from(2);
    }
    let threads = cli.threads;
    match vista::par::with_threads(threads, move || dispatch(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn inputs_of(cli: &Cli) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = cli.config.iter().cloned().collect();
    let opt = |o: &Option<PathBuf>| o.iter().cloned().collect::<Vec<_>>();
    match &cli.command {
        Command::Phantom { spec, .. } => v.push(spec.clone()),
        Command::Octa { volume, .. } => v.push(volume.clone()),
        Command::Layers {
            volume, overrides, stack, ..
        } => {
            v.push(volume.clone());
            v.extend(opt(overrides));
            v.extend(opt(stack));
        }
        Command::Vessels { enface, stack, slab, .. } => {
            v.extend([enface.clone(), stack.clone()]);
            v.extend(opt(&slab.surfaces));
        }
        Command::Fit { ids, stack, slab, .. } => {
            v.extend([ids.clone(), stack.clone()]);
            v.extend(opt(&slab.surfaces));
        }
        Command::Pulse { ids, stack, alpha, .. } => {
            v.extend([ids.clone(), stack.clone()]);
            v.extend(opt(alpha));
        }
        Command::Render { alpha, enface, .. } => v.extend([alpha.clone(), enface.clone()]),
        Command::Analyze { what } => match what {
            Analyze::Feasibility { .. } => {}
            Analyze::Cv { files, .. } => v.extend(files.iter().cloned()),
            Analyze::Consistency { x, y, .. } => v.extend([x.clone(), y.clone()]),
        },
        Command::Run { file, .. } => v.push(file.clone()),
    }
    v
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(PipelineConfig::default()),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Directory holding an output file, created if missing.
fn parent_of(out: &Path) -> Result<PathBuf> {
    let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    create_dir(dir)?;
    Ok(dir.to_path_buf())
}

fn dispatch(cli: Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_deref())?;
    let inputs = inputs_of(&cli);
    match cli.command {
        Command::Phantom { spec, out, seed } => {
            let mut s = PhantomSpec::load(&spec)?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let dir = parent_of(&out)?;
            let truth = write_phantom(&s, &out)?;
            println!("wrote {} ({} segments)", out.display(), truth.segments.len());
            let mut m = Manifest::new("phantom", &inputs, &cfg);
            m.seed = Some(s.seed);
            m.write(&dir.join(manifest_name(&out)))?;
        }
        Command::Octa {
            volume,
            out,
            mode,
            no_register,
        } => {
            let vol = container::read_volume(&volume)?;
            let mut octa = cfg.octa.clone();
            if let Some(m) = mode {
                octa.mode = match m {
                    Mode::Amplitude => OctaMode::Amplitude,
                    Mode::Complex => OctaMode::Complex,
                };
            }
            octa.register &= !no_register;
            let mut stack = octa_stack(&vol, octa.mode)?;
            let mut structural = vol.structural();
            let reg = register_stack(&mut stack, &mut structural, &octa)?;
            create_dir(&out)?;
            container::write_stack(&out, &stack)?;
            let p = out.join("structural.vvol");
            container::write_raw(&p, &container::volume_raw_f32(&structural, Semantic::Oct, Some(&stack.protocol))?)?;
            if let Some(r) = reg {
                let mut text = String::from("y,dx_px,dz_px,gain\n");
                for (y, (c, g)) in r.cumulative.iter().zip(&r.gain).enumerate() {
                    text += &format!("{y},{},{},{}\n", fmt_num(c.0), fmt_num(c.1), fmt_num(*g));
                }
                std::fs::write(out.join("registration.csv"), text)?;
            }
            Manifest::new("octa", &inputs, &cfg).write(&out.join("manifest.json"))?;
        }
        Command::Layers {
            volume,
            out,
            overrides,
            stack,
        } => {
            let structural = read_structural(&volume)?;
            let protocol = structural.1;
            let ov = match overrides.as_ref().or(cfg.layers.overrides.as_ref()) {
                Some(p) => load_overrides(p)?,
                None => Vec::new(),
            };
            let res = segment_layers(&structural.0, &protocol, &cfg.layers.segment, &ov)?;
            create_dir(&out)?;
            container::write_surfaces(out.join("surfaces.vvol"), &res.surfaces, Some(&protocol))?;
            let nz = structural.0.nz;
            let mean = match &stack {
                Some(s) => Some(container::read_stack(s)?.mean_unnormalized()),
                None => None,
            };
            let mut slabs = serde_json::Map::new();
            for name in ["rnflp", "scp_icp", "dcp", "choroid1", "choroid2", "choroid3"] {
                let b = evaluate_slab(&slab_spec(name, &cfg.layers)?, &res.surfaces, protocol.axial_spacing_um, nz);
                let thick: f64 = (0..b.ny * b.nx).map(|i| (b.end[i] - b.start[i]) as f64).sum::<f64>()
                    / (b.ny * b.nx) as f64
                    * protocol.axial_spacing_um;
                let flagged = b.flagged.iter().filter(|&&f| f != 0).count();
                slabs.insert(
                    name.into(),
                    serde_json::json!({ "mean_thickness_um": thick, "flagged": flagged }),
                );
                if let Some(m) = &mean {
                    let ef = enface(m, &b, Reducer::Mean)?;
                    container::write_grid(out.join(format!("{name}_enface.vvol")), &ef, Semantic::Enface, Some(&protocol))?;
                }
            }
            std::fs::write(out.join("slabs.json"), serde_json::to_string_pretty(&slabs)? + "\n")?;
            let violations = res.surfaces.ordering_violations().len();
            println!("surfaces written; {violations} ordering violations");
            Manifest::new("layers", &inputs, &cfg).write(&out.join("manifest.json"))?;
        }
        Command::Vessels { enface: ef, stack, out, slab } => {
            let (ef, _) = container::read_grid(&ef, &[Semantic::Enface])?;
            let stack = container::read_stack(&stack)?;
            let p = stack.protocol.clone();
            let (dy, dx, dz) = (p.bscan_spacing_um(), p.ascan_spacing_um, p.axial_spacing_um);
            let scales: Vec<f64> = cfg.vessels.vesselness.scale_factors.iter().map(|f| f * dx).collect();
            let ev = enface_vessels(&ef, &scales, (dy, dx), &cfg.vessels.vesselness, cfg.vessels.min_spur_px)?;
            let mean = stack.mean_unnormalized();
            let mask = vessel_mask_3d(&mean, [dy, dx, dz], &cfg.vessels)?;
            let bounds = slab_bounds(&slab, &cfg, &p, mean.dims())?;
            let ids = project_ids(&ev.ids, &mask, &bounds)?;
            create_dir(&out)?;
            std::fs::write(out.join("graph.json"), ev.graph.to_json() + "\n")?;
            container::write_id_image(out.join("ids2d.vvol"), &ev.ids)?;
            container::write_ids(out.join("ids.vvol"), &ids, Some(&p))?;
            container::write_mask(out.join("mask.vvol"), &mask, Some(&p))?;
            container::write_grid(out.join("vesselness.vvol"), &ev.vesselness, Semantic::Enface, Some(&p))?;
            println!("{} segments", ev.graph.links.len());
            Manifest::new("vessels", &inputs, &cfg).write(&out.join("manifest.json"))?;
        }
        Command::Fit {
            ids,
            stack,
            out,
            cuboid,
            slab,
        } => {
            let stack = container::read_stack(&stack)?;
            create_dir(&out)?;
            if let Some(c) = cuboid {
                let bounds = slab_bounds(&slab, &cfg, &stack.protocol, stack.dims())?;
                let fits = fit_cuboids(&stack, &bounds, c, cfg.fit.n_min, &cfg.fit.bounds)?;
                let mut text = String::from("layer,tile_y,tile_x,alpha,beta,residual,n_voxels,status\n");
                for l in 0..fits.layers {
                    for ty in 0..fits.tiles_y {
                        for tx in 0..fits.tiles_x {
                            let f = fits.get(l, ty, tx);
                            text += &format!(
                                "{l},{ty},{tx},{},{},{},{},{}\n",
                                fmt_num(f.alpha),
                                fmt_num(f.beta),
                                fmt_num(f.residual),
                                f.n_voxels,
                                f.status.as_str()
                            );
                        }
                    }
                    let g = fits.alpha_grid(l);
                    container::write_grid(out.join(format!("cuboid_alpha_{l}.vvol")), &g, Semantic::Alpha, Some(&stack.protocol))?;
                }
                std::fs::write(out.join("cuboids.csv"), text)?;
                println!("{} cuboid layers of {}x{} tiles", fits.layers, fits.tiles_y, fits.tiles_x);
            } else {
                let (ids, _) = container::read_ids(&ids)?;
                let fits = fit_segments(&ids, &stack, cfg.fit.n_min, &cfg.fit.bounds)?;
                write_fits_csv(out.join("segments.csv"), &fits)?;
                let alpha = paint_labels(&fits, &first_label(&ids));
                container::write_grid(out.join("alpha.vvol"), &alpha, Semantic::Alpha, Some(&stack.protocol))?;
                println!("{} segments fitted", fits.len());
            }
            Manifest::new("fit", &inputs, &cfg).write(&out.join("manifest.json"))?;
        }
        Command::Pulse {
            ids,
            stack,
            out,
            alpha,
            mmode,
        } => {
            let stack = container::read_stack(&stack)?;
            create_dir(&out)?;
            let pc = &cfg.pulse.config;
            if mmode {
                let r = mmode_alpha_series(&stack, pc, &cfg.fit.bounds)?;
                r.compiled.write_csv(out.join("pulse.csv"))?;
                let mut text = String::from("track,n_voxels,y,alpha,g\n");
                for t in &r.tracks {
                    for (y, (a, g)) in t.alpha.iter().zip(&t.g).enumerate() {
                        text += &format!("{},{},{y},{},{}\n", t.label, t.n_voxels, fmt_num(*a), fmt_num(*g));
                    }
                }
                std::fs::write(out.join("tracks.csv"), text)?;
                let rows: Vec<String> = r
                    .pearson
                    .iter()
                    .map(|row| row.iter().map(|v| fmt_num(*v)).collect::<Vec<_>>().join(","))
                    .collect();
                std::fs::write(out.join("pearson.csv"), rows.join("\n") + "\n")?;
                println!("{} tracks, mean correlation with g_rep {:.3}", r.tracks.len(), r.mean_correlation);
            } else {
                let (ids, _) = container::read_ids(&ids)?;
                let t = band_pulsatility(&ids, &stack, pc, &cfg.fit.bounds)?;
                t.write_csv(out.join("pulse.csv"))?;
                if let Some(a) = alpha {
                    let (map, _) = container::read_grid(&a, &[Semantic::Alpha])?;
                    let (comp, bad) = compensate(&map, &t.g_rep)?;
                    container::write_grid(out.join("alpha_compensated.vvol"), &comp, Semantic::Alpha, Some(&stack.protocol))?;
                    if !bad.is_empty() {
                        eprintln!("warning: {} rows left uncompensated", bad.len());
                    }
                }
                println!("band width {} B-scans, compiled α {:.4}", t.width, t.alpha_compiled());
            }
            Manifest::new("pulse", &inputs, &cfg).write(&out.join("manifest.json"))?;
        }
        Command::Render {
            alpha,
            enface: ef,
            out,
            range,
        } => {
            let (a, _) = container::read_grid(&alpha, &[Semantic::Alpha])?;
            let (e, _) = container::read_grid(&ef, &[Semantic::Enface])?;
            let mut rc = cfg.render.clone();
            if let Some(r) = range {
                rc.alpha_range = r;
            }
            let (img, info) = vista_image(&a, &e, &rc)?;
            parent_of(&out)?;
            write_with_sidecar(&img, &info, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Analyze { what } => analyze(what)?,
        Command::Run { file, out, seed } => {
            let mut cfg = PipelineConfig::load(&file)?;
            if seed.is_some() {
                cfg.input.seed = seed;
            }
            let (res, files) = run(&cfg, &out)?;
            let mut inputs = inputs;
            inputs.extend(cfg.input.phantom.iter().chain(&cfg.input.volume).cloned());
            let mut m = Manifest::new("run", &inputs, &cfg);
            m.seed = cfg.input.seed;
            m.outputs = files
                .iter()
                .filter_map(|f| f.strip_prefix(&out).ok().map(|p| p.to_string_lossy().into_owned()))
                .collect();
            m.write(&out.join("manifest.json"))?;
            let ok = res.fits.iter().filter(|f| f.fit.is_usable()).count();
            println!("{} segments, {ok} fitted; outputs in {}", res.fits.len(), out.display());
        }
    }
    Ok(())
}

fn manifest_name(out: &Path) -> String {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    format!("{stem}.manifest.json")
}

/// Structural volume from an OCT `.vvol` or a registered `structural.vvol`.
fn read_structural(path: &Path) -> Result<(Volume<f32>, ScanProtocol)> {
    let raw = container::read_raw(path)?;
    if raw.header.semantic != Semantic::Oct {
        bail!("{} is not an OCT volume", path.display());
    }
    if raw.header.dims.len() == 3 {
        let protocol = raw.header.protocol.clone().context("structural volume has no protocol")?;
        let d = raw.header.dims.clone();
        let container::Payload::F32(v) = raw.payload else {
            bail!("structural volume must be f32");
        };
        return Ok((Volume::from_vec(d[0], d[1], d[2], v)?, protocol));
    }
    let vol = container::oct_from_raw(raw)?;
    Ok((vol.structural(), vol.protocol))
}

fn slab_bounds(
    args: &SlabArgs,
    cfg: &PipelineConfig,
    p: &ScanProtocol,
    (ny, nx, nz): (usize, usize, usize),
) -> Result<vista::layers::SlabBounds> {
    match &args.surfaces {
        Some(s) => {
            let surfaces = container::read_surfaces(s)?;
            let b = evaluate_slab(&slab_spec(&args.slab, &cfg.layers)?, &surfaces, p.axial_spacing_um, nz);
            if b.dims() != (ny, nx) {
                bail!("surfaces do not match the volume");
            }
            Ok(b)
        }
        None => Ok(vista::layers::SlabBounds::full(ny, nx, nz)),
    }
}

/// First nonzero ID along depth for every A-scan.
fn first_label(ids: &Volume<u32>) -> Grid<u32> {
    let (ny, nx, nz) = ids.dims();
    let data = ids
        .data
        .chunks(nz)
        .map(|c| c.iter().copied().find(|&v| v != 0).unwrap_or(0))
        .collect();
    Grid { ny, nx, data }
}

fn read_table(path: &Path, column: &str) -> Result<BTreeMap<String, f64>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = r.headers()?.clone();
    let col = headers
        .iter()
        .position(|h| h == column)
        .with_context(|| format!("{}: no column '{column}'", path.display()))?;
    let keys: Vec<usize> = ["id", "slab", "region"]
        .iter()
        .filter_map(|k| headers.iter().position(|h| h == *k))
        .collect();
    let mut out = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let key = keys.iter().map(|&k| &rec[k]).collect::<Vec<_>>().join("/");
        let v: f64 = rec[col].parse().unwrap_or(f64::NAN);
        if v.is_finite() {
            out.insert(key, v);
        }
    }
    Ok(out)
}

fn analyze(what: Analyze) -> Result<()> {
    match what {
        Analyze::Feasibility { alpha, protocol } => {
            let p = ScanProtocol::preset(&protocol).with_context(|| format!("unknown protocol '{protocol}'"))?;
            let r = protocol_feasibility(alpha.0, alpha.1, &p);
            let verdict = |ok: bool| if ok { "pass" } else { "fail" };
            println!("protocol {protocol}: dt = {} ms, longest = {} ms", r.dt_ms, r.longest_ms);
            println!(
                "short bound: alpha_max = {} -> saturation {:.4} at dt ({})",
                r.alpha_max,
                r.short_saturation,
                verdict(r.short_ok)
            );
            println!(
                "long bound:  alpha_min = {} -> saturation {:.4} at longest ({})",
                r.alpha_min,
                r.long_saturation,
                verdict(r.long_ok)
            );
            println!("overall: {}", verdict(r.pass()));
        }
        Analyze::Cv { files, column } => {
            if files.len() < 2 {
                bail!("need at least two repeated runs");
            }
            let tables: Vec<_> = files.iter().map(|f| read_table(f, &column)).collect::<Result<_>>()?;
            println!("key,n,mean,cv");
            for key in tables[0].keys() {
                let v: Vec<f64> = tables.iter().filter_map(|t| t.get(key).copied()).collect();
                if v.len() == tables.len() {
                    let m = v.iter().sum::<f64>() / v.len() as f64;
                    let c = cv(&v).map(fmt_num).unwrap_or_else(|_| "nan".into());
                    println!("{key},{},{},{c}", v.len(), fmt_num(m));
                }
            }
        }
        Analyze::Consistency { x, y, column } => {
            let (tx, ty) = (read_table(&x, &column)?, read_table(&y, &column)?);
            let (xs, ys): (Vec<f64>, Vec<f64>) = tx.iter().filter_map(|(k, a)| ty.get(k).map(|b| (*a, *b))).unzip();
            let k = consistency_fit(&xs, &ys)?;
            println!("matched {} pairs; y = {:.4} x", xs.len(), k);
        }
    }
    Ok(())
}
