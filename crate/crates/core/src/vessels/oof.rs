//! Optimally oriented flux: gradient flux through a sphere, by FFT.

use crate::fft::{fft_nd, good_size, signed_freq};
use crate::par::*;
use crate::volume::Volume;
use crate::{Error, Result};
use num_complex::Complex64;
use std::f64::consts::PI;

/// Eigenvalues sorted `|λ1| ≥ |λ2| ≥ |λ3|` and the response
/// `M = √|λ1 λ2|` where `λ1, λ2 ≤ 0`, else 0.
#[derive(Debug, Clone, PartialEq)]
pub struct OofResult {
    pub lambda: [Volume<f32>; 3],
    pub m: Volume<f32>,
}

/// Spherical Bessel function `j1(x) / x`, stable near zero.
fn j1_over_x(x: f64) -> f64 {
    if x.abs() < 1e-3 {
        let x2 = x * x;
        1.0 / 3.0 - x2 / 30.0 + x2 * x2 / 840.0
    } else {
        (x.sin() / x - x.cos()) / (x * x)
    }
}

/// Fourier transform of the unit ball of radius `r` divided by its surface
/// area, at frequency magnitude `q` (cycles/µm).
pub fn ball_flux_transform(q: f64, r: f64) -> f64 {
    r * j1_over_x(2.0 * PI * q * r)
}

/// Eigenvalues of a symmetric 3×3 matrix `[a b c; b d e; c e f]`,
/// sorted by decreasing magnitude.
pub fn sym3_eigen(a: f64, b: f64, c: f64, d: f64, e: f64, f: f64) -> [f64; 3] {
    let p1 = b * b + c * c + e * e;
    let mut ev = if p1 == 0.0 {
        [a, d, f]
    } else {
        let q = (a + d + f) / 3.0;
        let p2 = (a - q).powi(2) + (d - q).powi(2) + (f - q).powi(2) + 2.0 * p1;
        let p = (p2 / 6.0).sqrt();
        let (ba, bd, bf, bb, bc, be) = ((a - q) / p, (d - q) / p, (f - q) / p, b / p, c / p, e / p);
        let det = ba * (bd * bf - be * be) - bb * (bb * bf - be * bc) + bc * (bb * be - bd * bc);
        let phi = (det / 2.0).clamp(-1.0, 1.0).acos() / 3.0;
        let e1 = q + 2.0 * p * phi.cos();
        let e3 = q + 2.0 * p * (phi + 2.0 * PI / 3.0).cos();
        [e1, 3.0 * q - e1 - e3, e3]
    };
    ev.sort_by(|x, y| y.abs().total_cmp(&x.abs()));
    ev
}

/// `M` from sorted eigenvalues.
#[inline]
pub fn oof_measure(l1: f64, l2: f64) -> f64 {
    if l1 <= 0.0 && l2 <= 0.0 {
        (l1 * l2).abs().sqrt()
    } else {
        0.0
    }
}

/// `M` with sheet-like voxels zeroed: where `|λ2| < min_ratio·|λ1|` the sign
/// of `λ2` is set by noise rather than by a second curved direction.
pub fn tubular_gate(res: &OofResult, min_ratio: f64) -> Volume<f32> {
    let [l1, l2, _] = &res.lambda;
    let mut out = res.m.clone();
    out.data
        .par_iter_mut()
        .zip(l1.data.par_iter().zip(l2.data.par_iter()))
        .for_each(|(m, (&a, &b))| {
            if (b.abs() as f64) < min_ratio * a.abs() as f64 {
                *m = 0.0;
            }
        });
    out
}

/// Oriented flux matrix at radius `r_um` on a volume with voxel spacing
/// `(y, x, z)` µm, with Gaussian pre-smoothing `sigma_um`.
///
/// The volume is edge-padded to FFT-friendly sizes; the sphere is evaluated in
/// physical coordinates, so anisotropic voxels are handled exactly.
pub fn oof_response(vol: &Volume<f32>, spacing_um: [f64; 3], r_um: f64, sigma_um: f64) -> Result<OofResult> {
    let dims = [vol.ny, vol.nx, vol.nz];
    if spacing_um.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::invalid("voxel spacing must be positive"));
    }
    if spacing_um.iter().any(|&d| r_um < d - 1e-9) {
        return Err(Error::invalid(format!("OOF radius {r_um} µm is below one voxel")));
    }
    if dims.iter().zip(&spacing_um).any(|(&n, &d)| r_um >= n as f64 * d) {
        return Err(Error::invalid(format!("OOF radius {r_um} µm exceeds the volume")));
    }
    let pad: Vec<usize> = spacing_um
        .iter()
        .map(|d| ((r_um + 4.0 * sigma_um) / d).ceil() as usize + 1)
        .collect();
    let pd: Vec<usize> = (0..3).map(|i| good_size(dims[i] + 2 * pad[i])).collect();
    let (py, px, pz) = (pd[0], pd[1], pd[2]);
    let src = |i: usize, k: usize| k.saturating_sub(pad[i]).min(dims[i] - 1);
    let mut spec = vec![Complex64::default(); py * px * pz];
    spec.par_chunks_mut(px * pz).enumerate().for_each(|(y, plane)| {
        let sy = src(0, y);
        for x in 0..px {
            let col = vol.column(sy, src(1, x));
            for z in 0..pz {
                plane[x * pz + z] = Complex64::new(col[src(2, z)] as f64, 0.0);
            }
        }
    });
    fft_nd(&mut spec, &pd, false);

    let freq = |i: usize, k: usize| signed_freq(k, pd[i]) / (pd[i] as f64 * spacing_um[i]);
    let s2 = sigma_um * sigma_um;
    let pairs = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];
    let mut q: Vec<Vec<f32>> = Vec::with_capacity(6);
    let n = vol.len();
    for &(a, b) in &pairs {
        let mut buf = spec.clone();
        buf.par_chunks_mut(px * pz).enumerate().for_each(|(y, plane)| {
            let uy = freq(0, y);
            for x in 0..px {
                let ux = freq(1, x);
                for z in 0..pz {
                    let uz = freq(2, z);
                    let u = [uy, ux, uz];
                    let q2 = uy * uy + ux * ux + uz * uz;
                    let k = -4.0 * PI * PI * u[a] * u[b] * ball_flux_transform(q2.sqrt(), r_um) * (-2.0 * PI * PI * s2 * q2).exp();
                    plane[x * pz + z] *= k;
                }
            }
        });
        fft_nd(&mut buf, &pd, true);
        let mut out = vec![0.0f32; n];
        out.par_chunks_mut(vol.nz).enumerate().for_each(|(i, col)| {
            let (y, x) = (i / vol.nx + pad[0], i % vol.nx + pad[1]);
            let base = (y * px + x) * pz + pad[2];
            for (z, o) in col.iter_mut().enumerate() {
                *o = buf[base + z].re as f32;
            }
        });
        q.push(out);
    }

    let mut l = [vec![0.0f32; n], vec![0.0f32; n], vec![0.0f32; n]];
    let mut m = vec![0.0f32; n];
    let [l1, l2, l3] = &mut l;
    l1.par_iter_mut()
        .zip(l2.par_iter_mut())
        .zip(l3.par_iter_mut())
        .zip(m.par_iter_mut())
        .enumerate()
        .for_each(|(i, (((e1, e2), e3), mm))| {
            let ev = sym3_eigen(
                q[0][i] as f64,
                q[1][i] as f64,
                q[2][i] as f64,
                q[3][i] as f64,
                q[4][i] as f64,
                q[5][i] as f64,
            );
            *e1 = ev[0] as f32;
            *e2 = ev[1] as f32;
            *e3 = ev[2] as f32;
            *mm = oof_measure(ev[0], ev[1]) as f32;
        });
    let wrap = |data: Vec<f32>| Volume {
        ny: vol.ny,
        nx: vol.nx,
        nz: vol.nz,
        data,
    };
    let [l1, l2, l3] = l;
    Ok(OofResult {
        lambda: [wrap(l1), wrap(l2), wrap(l3)],
        m: wrap(m),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn build(dims: [usize; 3], sp: [f64; 3], f: impl Fn([f64; 3]) -> f64) -> Volume<f32> {
        let mut v = Volume::filled(dims[0], dims[1], dims[2], 0.0f32);
        for y in 0..dims[0] {
            for x in 0..dims[1] {
                for z in 0..dims[2] {
                    let p = [
                        (y as f64 - (dims[0] / 2) as f64) * sp[0],
                        (x as f64 - (dims[1] / 2) as f64) * sp[1],
                        (z as f64 - (dims[2] / 2) as f64) * sp[2],
                    ];
                    v.set(y, x, z, f(p) as f32);
                }
            }
        }
        v
    }

    fn centre(v: &Volume<f32>) -> f32 {
        *v.get(v.ny / 2, v.nx / 2, v.nz / 2)
    }

    #[test]
    fn eigen_matches_nalgebra() {
        let cases = [
            [2.0, 0.5, -0.3, 1.0, 0.2, -4.0],
            [1.0, 0.0, 0.0, 1.0, 0.0, 1.0],
            [0.0, 1.0, 1.0, 0.0, 1.0, 0.0],
            [-3.0, 1e-3, 0.0, -3.0, 0.0, 0.5],
        ];
        for c in cases {
            let m = nalgebra::Matrix3::new(c[0], c[1], c[2], c[1], c[3], c[4], c[2], c[4], c[5]);
            let mut want: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
            want.sort_by(|x, y| y.abs().total_cmp(&x.abs()));
            let got = sym3_eigen(c[0], c[1], c[2], c[3], c[4], c[5]);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-9, "{got:?} vs {want:?}");
            }
        }
    }

    #[test]
    fn constant_volume_has_no_flux() {
        let v = Volume::filled(16, 16, 16, 5.0f32);
        let r = oof_response(&v, [2.0; 3], 4.0, 2.0).unwrap();
        assert!(r.m.data.iter().all(|&x| x.abs() < 1e-4));
        assert!(r.lambda[0].data.iter().all(|&x| x.abs() < 1e-4));
    }

    #[test]
    fn radius_limits() {
        let v = Volume::filled(8, 8, 8, 1.0f32);
        assert!(oof_response(&v, [2.0; 3], 1.0, 1.0).is_err());
        assert!(oof_response(&v, [2.0; 3], 16.0, 1.0).is_err());
    }

    /// Direct spherical integral of the analytic smoothed-tube gradient,
    /// sampled on a Fibonacci sphere.
    fn sphere_flux(s: f64, sigma: f64, r: f64) -> [[f64; 3]; 3] {
        let v = s * s + sigma * sigma;
        let amp = s * s / v;
        // Tube along z in (y, x, z) order; gradient of amp·exp(−ρ²/2v).
        let grad = |p: [f64; 3]| {
            let e = amp * (-(p[0] * p[0] + p[1] * p[1]) / (2.0 * v)).exp();
            [-p[0] / v * e, -p[1] / v * e, 0.0]
        };
        let n = 20000;
        let mut q = [[0.0; 3]; 3];
        let golden = PI * (3.0 - 5f64.sqrt());
        for k in 0..n {
            let zc = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
            let rho = (1.0 - zc * zc).sqrt();
            let th = golden * k as f64;
            let nrm = [rho * th.cos(), rho * th.sin(), zc];
            let g = grad([r * nrm[0], r * nrm[1], r * nrm[2]]);
            for i in 0..3 {
                for j in 0..3 {
                    q[i][j] += g[i] * nrm[j] / n as f64;
                }
            }
        }
        q
    }

    #[test]
    fn fft_flux_matches_sphere_integral() {
        let (s, sigma, r) = (4.0, 2.0, 6.0);
        let sp = [2.0, 2.0, 2.0];
        let v = build([41, 41, 21], sp, |p| (-(p[0] * p[0] + p[1] * p[1]) / (2.0 * s * s)).exp());
        let res = oof_response(&v, sp, r, sigma).unwrap();
        let q = sphere_flux(s, sigma, r);
        let want = sym3_eigen(q[0][0], q[0][1], q[0][2], q[1][1], q[1][2], q[2][2]);
        for k in 0..2 {
            let got = centre(&res.lambda[k]) as f64;
            assert!((got - want[k]).abs() < 0.02 * want[0].abs(), "λ{k}: {got} vs {}", want[k]);
        }
        let ratio = centre(&res.m) as f64 / oof_measure(want[0], want[1]);
        assert!((ratio - 1.0).abs() < 0.03, "{ratio}");
    }

    #[test]
    fn tube_has_two_equal_negative_eigenvalues() {
        let sp = [4.0, 4.0, 2.0];
        let r = 8.0;
        let v = build([31, 31, 41], sp, |p| f64::from(p[0] * p[0] + p[1] * p[1] <= r * r));
        let res = oof_response(&v, sp, r, 2.0).unwrap();
        let l: Vec<f32> = res.lambda.iter().map(centre).collect();
        assert!(l[0] < 0.0 && l[1] < 0.0);
        assert!((l[0] - l[1]).abs() < 0.1 * l[0].abs(), "{l:?}");
        assert!(l[2].abs() < 0.1 * l[1].abs(), "{l:?}");
        assert!(centre(&res.m) > 0.0);
        for i in 0..res.m.len() {
            let m = res.m.data[i];
            let (a, b) = (res.lambda[0].data[i], res.lambda[1].data[i]);
            if m > 0.0 {
                assert!(a <= 0.0 && b <= 0.0);
                assert!((m - (a * b).abs().sqrt()).abs() <= 1e-6 * m.max(1.0));
            }
        }
    }

    #[test]
    fn plane_is_suppressed_relative_to_tube() {
        let sp = [4.0, 4.0, 2.0];
        let r = 8.0;
        let tube = build([31, 31, 41], sp, |p| f64::from(p[0] * p[0] + p[2] * p[2] <= r * r));
        let plane = build([31, 31, 41], sp, |p| f64::from(p[2].abs() <= r));
        let mt = centre(&oof_response(&tube, sp, r, 2.0).unwrap().m);
        let rp = oof_response(&plane, sp, r, 2.0).unwrap();
        let mp = centre(&rp.m);
        assert!(mp <= 0.1 * mt, "plane {mp} tube {mt}");
        let l: Vec<f32> = rp.lambda.iter().map(centre).collect();
        assert!(l[1].abs() < 0.1 * l[0].abs(), "{l:?}");
    }

    #[test]
    fn gate_drops_sheet_keeps_tube() {
        let sp = [4.0, 4.0, 2.0];
        let r = 8.0;
        let tube = build([31, 31, 41], sp, |p| f64::from(p[0] * p[0] + p[2] * p[2] <= r * r));
        let plane = build([31, 31, 41], sp, |p| f64::from(p[2].abs() <= r) + 1e-3 * (p[0] * 0.7 + p[1]).sin());
        let gt = tubular_gate(&oof_response(&tube, sp, r, 2.0).unwrap(), 0.3);
        let gp = tubular_gate(&oof_response(&plane, sp, r, 2.0).unwrap(), 0.3);
        assert!(centre(&gt) > 0.0);
        let mut on_plane = plane.data.iter().zip(&gp.data).filter(|(&v, _)| v > 0.5);
        assert!(on_plane.clone().count() > 0 && on_plane.all(|(_, &m)| m == 0.0));
        let full = oof_response(&tube, sp, r, 2.0).unwrap();
        assert_eq!(tubular_gate(&full, 0.0), full.m);
    }

    #[test]
    fn rotation_keeps_axis_response() {
        let sp = [3.0, 3.0, 3.0];
        let r = 6.0;
        let along_z = build([33, 33, 33], sp, |p| (-(p[0] * p[0] + p[1] * p[1]) / 32.0).exp());
        let along_x = build([33, 33, 33], sp, |p| (-(p[0] * p[0] + p[2] * p[2]) / 32.0).exp());
        let a = centre(&oof_response(&along_z, sp, r, 3.0).unwrap().m);
        let b = centre(&oof_response(&along_x, sp, r, 3.0).unwrap().m);
        assert!((a / b - 1.0).abs() < 0.05, "{a} {b}");
    }
}
