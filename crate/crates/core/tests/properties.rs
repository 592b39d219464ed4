//! Randomized invariants across modules.

use proptest::prelude::*;
use vista::analysis::{consistency_fit, cv, region_stats, Region};
use vista::container::{decode, encode, oct_from_raw, oct_to_raw};
use vista::fit::{fit_decay, fit_voxels, FitBounds};
use vista::layers::{enforce_order, lowess_2d};
use vista::octa::{octa_stack, pair_amplitude, OctaMode};
use vista::pulse::compensate;
use vista::render::alpha_hue;
use vista::vessels::{build_graph, oof_response, thin};
use vista::{Grid, OctVolume, Samples, ScanProtocol, Volume};

fn protocol(l: usize, n: usize) -> ScanProtocol {
    let mut p = ScanProtocol::preset_3x3();
    p.n_repeats = n;
    p.n_bands = l;
    p
}

fn amp_volume() -> impl Strategy<Value = OctVolume> {
    (1usize..=3, 2usize..=5, 1usize..=3, 1usize..=3, 1usize..=3).prop_flat_map(|(l, n, ny, nx, nz)| {
        prop::collection::vec(0.0f32..10.0, l * n * ny * nx * nz).prop_map(move |d| {
            OctVolume::new(protocol(l, n), [l, n, ny, nx, nz], Samples::Amplitude(d)).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn pair_terms_are_symmetric(a in 0.0f32..100.0, b in 0.0f32..100.0) {
        prop_assert_eq!(pair_amplitude(a, b), pair_amplitude(b, a));
    }

    #[test]
    fn stack_is_mean_of_pair_terms(vol in amp_volume()) {
        let s = octa_stack(&vol, OctaMode::Amplitude).unwrap();
        let (l, n) = (vol.n_bands, vol.n_repeats);
        for v in 0..vol.voxels() {
            for m in 1..n {
                let (mut u, mut w) = (0.0f64, 0.0f64);
                for band in 0..l {
                    for j in 0..n - m {
                        let (a, b) = pair_amplitude(vol.amplitude(band, j, v), vol.amplitude(band, j + m, v));
                        u += a;
                        w += b;
                    }
                }
                let k = (l * (n - m)) as f64;
                prop_assert!((s.unnormalized[m - 1].data[v] as f64 - u / k).abs() <= 1e-5 * (1.0 + u / k));
                prop_assert!((s.normalized[m - 1].data[v] as f64 - w / k).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn unnormalized_scales_linearly(vol in amp_volume(), c in 0.01f32..100.0) {
        let Samples::Amplitude(d) = &vol.samples else { unreachable!() };
        let scaled = OctVolume::new(vol.protocol.clone(), vol.dims(), Samples::Amplitude(d.iter().map(|v| v * c).collect())).unwrap();
        let (a, b) = (octa_stack(&vol, OctaMode::Amplitude).unwrap(), octa_stack(&scaled, OctaMode::Amplitude).unwrap());
        for (x, y) in a.unnormalized.iter().zip(&b.unnormalized) {
            for (&p, &q) in x.data.iter().zip(&y.data) {
                prop_assert!((p * c - q).abs() <= 1e-4 * (1.0 + q.abs()));
            }
        }
    }

    #[test]
    fn container_round_trip(vol in amp_volume()) {
        let back = oct_from_raw(decode(&encode(&oct_to_raw(&vol).unwrap()).unwrap()).unwrap()).unwrap();
        prop_assert_eq!(back, vol);
    }

    #[test]
    fn cv_is_scale_invariant(v in prop::collection::vec(0.1f64..10.0, 2..20), c in 0.01f64..100.0) {
        let s: Vec<f64> = v.iter().map(|x| x * c).collect();
        prop_assert!((cv(&s).unwrap() - cv(&v).unwrap()).abs() <= 1e-9);
    }

    #[test]
    fn consistency_is_scale_equivariant(xy in prop::collection::vec((0.1f64..5.0, 0.1f64..5.0), 2..30), c in 0.01f64..100.0) {
        let (x, y): (Vec<f64>, Vec<f64>) = xy.into_iter().unzip();
        let cy: Vec<f64> = y.iter().map(|v| v * c).collect();
        let k = consistency_fit(&x, &y).unwrap();
        prop_assert!((consistency_fit(&x, &cy).unwrap() - c * k).abs() <= 1e-9 * c * k.abs().max(1.0));
    }

    #[test]
    fn region_partition_weighted_mean(
        vals in prop::collection::vec(0.0f32..3.0, 64),
        skel in prop::collection::vec(any::<bool>(), 64),
        split in 1usize..63,
    ) {
        prop_assume!(skel[..split].iter().any(|&b| b) && skel[split..].iter().any(|&b| b));
        let map = Grid::from_vec(8, 8, vals).unwrap();
        let skeleton = Grid::from_vec(8, 8, skel.iter().map(|&b| u8::from(b)).collect()).unwrap();
        let mask = |lo: usize, hi: usize| Grid::from_vec(8, 8, (0..64).map(|i| u8::from(i >= lo && i < hi)).collect()).unwrap();
        let regions = [Region { name: "a".into(), mask: mask(0, split) }, Region { name: "b".into(), mask: mask(split, 64) }];
        let st = region_stats(&map, &regions, &skeleton).unwrap();
        let weighted = (st[0].mean * st[0].n_pixels as f64 + st[1].mean * st[1].n_pixels as f64)
            / (st[0].n_pixels + st[1].n_pixels) as f64;
        prop_assert_eq!(st[2].n_pixels, st[0].n_pixels + st[1].n_pixels);
        prop_assert!((st[2].mean - weighted).abs() <= 1e-9);
    }

    #[test]
    fn compensation_preserves_weighted_global_mean(
        alpha in prop::collection::vec(0.1f32..3.0, 6 * 5),
        g in prop::collection::vec(-0.3f64..0.3, 6),
    ) {
        let mean_g = g.iter().sum::<f64>() / g.len() as f64;
        let g: Vec<f64> = g.iter().map(|v| v - mean_g).collect();
        let a = Grid::from_vec(6, 5, alpha).unwrap();
        let (c, bad) = compensate(&a, &g).unwrap();
        prop_assert!(bad.is_empty());
        let n = a.data.len() as f64;
        let back: f64 = c.data.iter().enumerate().map(|(i, &v)| v as f64 * (1.0 + g[i / 5])).sum::<f64>() / n;
        let orig: f64 = a.data.iter().map(|&v| v as f64).sum::<f64>() / n;
        prop_assert!((back - orig).abs() <= 1e-6);
    }

    #[test]
    fn hue_is_affine_and_clamped(a in -5.0f64..10.0, b in 0.1f64..2.5) {
        let h = |x| alpha_hue(x, (0.1, 2.5), (0.67, 0.0));
        let slope = -0.67 / 2.4;
        if (0.1..=2.5).contains(&a) {
            prop_assert!((h(a) - h(b) - slope * (a - b)).abs() <= 1e-12);
        } else if a < 0.1 {
            prop_assert_eq!(h(a), 0.67);
        } else {
            prop_assert_eq!(h(a), 0.0);
        }
    }

    #[test]
    fn fitted_curve_is_monotone_and_beats_a_constant(y in prop::collection::vec(0.0f64..1.0, 7)) {
        let tau: Vec<f64> = (1..=7).map(f64::from).collect();
        let f = fit_decay(&tau, &y, &FitBounds::default());
        prop_assume!(f.alpha.is_finite());
        for w in tau.windows(2) {
            prop_assert!(f.eval(w[1]) >= f.eval(w[0]) - 1e-12);
        }
        let mean = y.iter().sum::<f64>() / 7.0;
        let rms_const = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 7.0).sqrt();
        prop_assert!(f.residual <= rms_const + 1e-9);
    }

    #[test]
    fn exact_data_in_window_is_recovered(alpha in 0.1f64..3.0, beta in 0.05f64..1.0) {
        prop_assume!(alpha * 7.0 >= 0.7);
        let tau: Vec<f64> = (1..=7).map(f64::from).collect();
        let y: Vec<f64> = tau.iter().map(|t| beta * (1.0 - (-alpha * t).exp())).collect();
        let f = fit_decay(&tau, &y, &FitBounds::default());
        prop_assert!((f.alpha / alpha - 1.0).abs() < 1e-4, "{} vs {alpha}", f.alpha);
        prop_assert!((f.beta / beta - 1.0).abs() < 1e-4);
    }

    #[test]
    fn voxel_order_does_not_matter(
        vals in prop::collection::vec(0.0f32..1.0, 3 * 40),
        order in Just((0..40).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let cols: Vec<Volume<f32>> = vals.chunks(40).map(|c| Volume::from_vec(1, 40, 1, c.to_vec()).unwrap()).collect();
        let sorted: Vec<usize> = (0..40).collect();
        let a = fit_voxels(&sorted, &cols, 1.0, 10, &FitBounds::default());
        let b = fit_voxels(&order, &cols, 1.0, 10, &FitBounds::default());
        prop_assert_eq!(a.alpha.to_bits(), b.alpha.to_bits());
        prop_assert_eq!(a.beta.to_bits(), b.beta.to_bits());
    }

    #[test]
    fn lowess_reproduces_planes(a in -2.0f32..2.0, b in -2.0f32..2.0, c in -50.0f32..50.0, robust in 0usize..=2) {
        let g = Grid::from_vec(12, 14, (0..12 * 14).map(|i| c + a * (i / 14) as f32 + b * (i % 14) as f32).collect()).unwrap();
        let once = lowess_2d(&g, 30.0, (6.0, 6.0), robust).unwrap();
        let twice = lowess_2d(&once, 30.0, (6.0, 6.0), robust).unwrap();
        for ((&x, &y), &z) in g.data.iter().zip(&once.data).zip(&twice.data) {
            prop_assert!((x - y).abs() <= 1e-5 * (1.0 + x.abs()), "{x} vs {y}");
            prop_assert!((y - z).abs() <= 1e-6 * (1.0 + y.abs()), "{y} vs {z}");
        }
    }

    #[test]
    fn order_holds_after_enforcement(s in prop::collection::vec(prop_oneof![Just(f32::NAN), 0.0f32..300.0], 4 * 20)) {
        let g = |k: usize| Grid::from_vec(4, 5, s[k * 20..(k + 1) * 20].to_vec()).unwrap();
        let (mut i, mut r, mut n, mut p) = (g(0), g(1), g(2), g(3));
        let mut flags = Grid::filled(4, 5, 0u8);
        enforce_order(&mut i, &mut r, &mut n, &mut p, &mut flags, 2.7, 324.0);
        for k in 0..20 {
            prop_assert!(i.data[k] < r.data[k] && r.data[k] < n.data[k] && n.data[k] < p.data[k]);
        }
    }

    #[test]
    fn skeleton_splits_into_links_and_nodes(bits in prop::collection::vec(prop::bool::weighted(0.45), 16 * 16)) {
        let mask = Grid::from_vec(16, 16, bits.iter().map(|&b| u8::from(b)).collect()).unwrap();
        let skel = thin(&mask);
        let graph = build_graph(&skel);
        let mut seen = Grid::filled(16, 16, 0u8);
        for &(y, x) in graph.links.iter().flat_map(|l| &l.pixels).chain(graph.nodes.iter().flat_map(|n| &n.pixels)) {
            prop_assert_eq!(*seen.get(y, x), 0, "pixel ({}, {}) claimed twice", y, x);
            seen.set(y, x, 1);
        }
        prop_assert_eq!(seen, skel);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn oof_sign_gate_and_measure(vals in prop::collection::vec(0.0f32..1.0, 10 * 10 * 10)) {
        let v = Volume::from_vec(10, 10, 10, vals).unwrap();
        let r = oof_response(&v, [1.0; 3], 2.0, 1.0).unwrap();
        for i in 0..v.data.len() {
            let (m, a, b) = (r.m.data[i], r.lambda[0].data[i], r.lambda[1].data[i]);
            prop_assert!(a.abs() >= b.abs() && b.abs() >= r.lambda[2].data[i].abs());
            if m > 0.0 {
                prop_assert!(a <= 0.0 && b <= 0.0);
                prop_assert!((m - (a * b).abs().sqrt()).abs() <= 1e-5 * m.max(1.0));
            } else {
                prop_assert!(m == 0.0);
            }
        }
    }
}

#[test]
fn phantom_is_identical_across_worker_counts() {
    use vista::phantom::{build_phantom, CapillaryLayout, PhantomSpec};
    let spec = PhantomSpec::retina(ScanProtocol::preset_3x3().scaled_fov(0.3), &CapillaryLayout { rows: 3, ..Default::default() }, 5);
    let a = vista::par::with_threads(Some(1), || build_phantom(&spec).unwrap().0);
    let b = vista::par::with_threads(Some(3), || build_phantom(&spec).unwrap().0);
    assert_eq!(a, b);
}
