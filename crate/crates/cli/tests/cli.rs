//! End-to-end checks of the `vista` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vista::phantom::{CapillaryLayout, PhantomSpec};
use vista::ScanProtocol;

fn vista(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vista"))
        .args(args)
        .current_dir(dir)
        .env("VISTA_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn is_png(p: &Path) -> bool {
    std::fs::read(p).map(|b| b.starts_with(b"\x89PNG\r\n\x1a\n")).unwrap_or(false)
}

#[test]
fn run_on_bundled_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("run_phantom.toml");
    let out = ok(&vista(&["run", cfg.to_str().unwrap(), "-o", "out"], tmp.path()));
    assert!(out.contains("segments"), "{out}");
    let dir = tmp.path().join("out");
    for f in ["segments.csv", "regions.csv", "pulse.csv", "truth_match.csv", "manifest.json"] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
    for slab in ["scp_icp", "dcp"] {
        assert!(is_png(&dir.join(format!("{slab}_vista.png"))));
        assert!(dir.join(format!("{slab}_vista.json")).is_file());
    }
    let seg = std::fs::read_to_string(dir.join("segments.csv")).unwrap();
    assert!(seg.starts_with("id,slab,alpha,beta,residual,n_voxels,status,alpha0"));
    assert!(seg.lines().count() > 10);
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "run");
    assert_eq!(manifest["seed"], 1);

    let regions = dir.join("regions.csv");
    let r = regions.to_str().unwrap();
    let k = ok(&vista(&["analyze", "consistency", r, r], tmp.path()));
    assert!(k.contains("y = 1.0000 x"), "{k}");
    let cv = ok(&vista(&["analyze", "cv", r, r, "--column", "mean_alpha0"], tmp.path()));
    assert!(cv.lines().count() > 1);
    for l in cv.lines().skip(1) {
        let c: f64 = l.rsplit(',').next().unwrap().parse().unwrap();
        assert_eq!(c, 0.0, "{l}");
    }
}

#[test]
fn staged_commands_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let layout = CapillaryLayout { rows: 3, ..CapillaryLayout::default() };
    let spec = PhantomSpec::retina(ScanProtocol::preset_3x3().scaled_fov(0.4), &layout, 3);
    std::fs::write(d.join("small.toml"), spec.to_toml()).unwrap();

    ok(&vista(&["phantom", "small.toml", "-o", "ph/vol.vvol"], d));
    assert!(d.join("ph/vol.truth.json").is_file());
    ok(&vista(&["octa", "ph/vol.vvol", "-o", "octa"], d));
    assert!(d.join("octa/registration.csv").is_file());
    ok(&vista(&["layers", "ph/vol.vvol", "-o", "layers", "--stack", "octa"], d));
    let v = ok(&vista(
        &["vessels", "layers/scp_icp_enface.vvol", "octa", "-o", "ves", "--surfaces", "layers/surfaces.vvol"],
        d,
    ));
    assert!(v.starts_with("3 segments"), "{v}");
    ok(&vista(&["fit", "ves/ids.vvol", "octa", "-o", "fit"], d));
    let seg = std::fs::read_to_string(d.join("fit/segments.csv")).unwrap();
    assert_eq!(seg.lines().count(), 4, "{seg}");
    ok(&vista(&["fit", "ves/ids.vvol", "octa", "-o", "cub", "--cuboid", "53x53x8"], d));
    assert!(d.join("cub/cuboids.csv").is_file());
    ok(&vista(&["pulse", "ves/ids.vvol", "octa", "-o", "pulse", "--alpha", "fit/alpha.vvol"], d));
    assert!(d.join("pulse/alpha_compensated.vvol").is_file());
    ok(&vista(&["render", "fit/alpha.vvol", "layers/scp_icp_enface.vvol", "-o", "img/a.png", "--range", "0.1:2.5"], d));
    ok(&vista(&["render", "fit/alpha.vvol", "layers/scp_icp_enface.vvol", "-o", "img/b.png", "--range", "0.1:2.5"], d));
    let (a, b) = (std::fs::read(d.join("img/a.png")).unwrap(), std::fs::read(d.join("img/b.png")).unwrap());
    assert!(is_png(&d.join("img/a.png")) && a == b);
}

#[test]
fn feasibility_report() {
    let tmp = tempfile::tempdir().unwrap();
    let pass = ok(&vista(&["analyze", "feasibility", "--alpha", "0.3:2.5", "--protocol", "3x3"], tmp.path()));
    assert!(pass.contains("(pass)") && pass.contains("overall: pass") && !pass.contains("(fail)"), "{pass}");
    let fail = ok(&vista(&["analyze", "feasibility", "--alpha", "0.05:4", "--protocol", "3x3"], tmp.path()));
    assert!(fail.contains("overall: fail"), "{fail}");
}

#[test]
fn missing_input_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = vista(&["octa", "absent.vvol", "-o", "x"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.vvol"));
    assert!(!tmp.path().join("x").exists());
}

#[test]
fn bad_config_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("bad.toml"), "[fitt]\nn_min = 3\n").unwrap();
    let out = vista(&["run", "bad.toml", "-o", "x"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fitt"));
}
