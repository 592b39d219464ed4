//! Rigid in-B-scan registration by phase correlation.

use crate::fft::{fft_nd, signed_freq};
use crate::par::*;
use crate::volume::Volume;
use crate::{Error, Result};
use num_complex::Complex64;
use std::f64::consts::PI;

/// Per-B-scan `(dx, dz)` corrections in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Registration {
    /// Correction of B-scan `y` relative to `y − 1` (zero for `y = 0`).
    pub pairwise: Vec<(f64, f64)>,
    /// Accumulated correction relative to the first B-scan.
    pub cumulative: Vec<(f64, f64)>,
    /// B-scans whose pair had no signal and was given a zero shift.
    pub degenerate: Vec<usize>,
    /// Relative correlation gain of each pair (zero for `y = 0`).
    pub gain: Vec<f64>,
}

fn spectrum(img: &[f32], nx: usize, nz: usize) -> Vec<Complex64> {
    let mean = img.iter().map(|&v| v as f64).sum::<f64>() / img.len().max(1) as f64;
    let mut buf: Vec<Complex64> = img.iter().map(|&v| Complex64::new(v as f64 - mean, 0.0)).collect();
    fft_nd(&mut buf, &[nx, nz], false);
    buf
}

/// Shift `(dx, dz)` that moves `moving` onto `reference`, resolved to
/// `1 / upsample` pixel. `None` if either image has no signal.
pub fn phase_correlate(reference: &[f32], moving: &[f32], nx: usize, nz: usize, upsample: usize) -> Option<(f64, f64)> {
    scored_correlate(reference, moving, nx, nz, upsample).map(|c| (c.0, c.1))
}

/// Like [`phase_correlate`], plus the relative gain of the integer peak over
/// the zero-shift correlation.
pub fn scored_correlate(reference: &[f32], moving: &[f32], nx: usize, nz: usize, upsample: usize) -> Option<(f64, f64, f64)> {
    let energy = |v: &[f32]| v.iter().map(|x| x.abs() as f64).sum::<f64>();
    if energy(reference) == 0.0 || energy(moving) == 0.0 {
        return None;
    }
    let fr = spectrum(reference, nx, nz);
    let fm = spectrum(moving, nx, nz);
    let mut r: Vec<Complex64> = fr
        .iter()
        .zip(&fm)
        .map(|(a, b)| {
            a * b.conj()
        })
        .collect();
    let cross = r.clone();
    fft_nd(&mut r, &[nx, nz], true);
    let (mut best, mut bi) = (f64::NEG_INFINITY, 0);
    for (i, v) in r.iter().enumerate() {
        if v.re > best {
            best = v.re;
            bi = i;
        }
    }
    let px = signed_freq(bi / nz, nx);
    let pz = signed_freq(bi % nz, nz);
    let zero = r[0].re;
    let gain = if zero > 0.0 { best / zero - 1.0 } else { f64::INFINITY };
    if upsample <= 1 {
        return Some((px, pz, gain));
    }
    // Local upsampled DFT around the integer peak, evaluated separably.
    let up = upsample as f64;
    let half = (1.5 * up).round() as i64;
    let offs: Vec<f64> = (-half..=half).map(|k| k as f64 / up).collect();
    let fx: Vec<f64> = (0..nx).map(|u| signed_freq(u, nx)).collect();
    let fz: Vec<f64> = (0..nz).map(|v| signed_freq(v, nz)).collect();
    // inner[u][b] = Σ_v R(u, v) e^{i2π v (pz + offs[b]) / nz}
    let nb = offs.len();
    let twiddle = |f: &[f64], n: usize, p0: f64| -> Vec<Complex64> {
        f.iter()
            .flat_map(|&fr| {
                offs.iter()
                    .map(move |o| Complex64::from_polar(1.0, 2.0 * PI * fr * (p0 + o) / n as f64))
            })
            .collect()
    };
    let tz = twiddle(&fz, nz, pz);
    let tx = twiddle(&fx, nx, px);
    let mut inner = vec![Complex64::default(); nx * nb];
    for u in 0..nx {
        let row = &cross[u * nz..(u + 1) * nz];
        for b in 0..nb {
            inner[u * nb + b] = row.iter().enumerate().map(|(v, c)| c * tz[v * nb + b]).sum();
        }
    }
    let (mut best, mut ba, mut bb) = (f64::NEG_INFINITY, 0, 0);
    for a in 0..nb {
        for b in 0..nb {
            let acc: Complex64 = (0..nx).map(|u| inner[u * nb + b] * tx[u * nb + a]).sum();
            if acc.re > best {
                best = acc.re;
                ba = a;
                bb = b;
            }
        }
    }
    Some((px + offs[ba], pz + offs[bb], gain))
}

/// Registers each B-scan to its predecessor (B-scans are `(x, z)` planes of
/// `bscans`, typically mean unnormalized OCTA). A pair whose correlation peak
/// beats the unshifted overlap by less than `min_gain` (relative) keeps a
/// zero shift: content that is nearly invariant along a direction gives a
/// flat, noise-driven peak.
pub fn register_bscans(bscans: &Volume<f32>, upsample: usize, min_gain: f64) -> Result<Registration> {
    if bscans.ny < 2 {
        return Err(Error::invalid("registration needs at least 2 B-scans"));
    }
    let (nx, nz) = (bscans.nx, bscans.nz);
    let pairs: Vec<Option<(f64, f64, f64)>> = (1..bscans.ny)
        .into_par_iter()
        .map(|y| scored_correlate(bscans.bscan(y - 1), bscans.bscan(y), nx, nz, upsample))
        .collect();
    let mut pairwise = vec![(0.0, 0.0)];
    let mut gain = vec![0.0];
    let mut degenerate = Vec::new();
    for (k, p) in pairs.into_iter().enumerate() {
        gain.push(p.map_or(0.0, |c| c.2));
        match p {
            Some((dx, dz, g)) if g >= min_gain => pairwise.push((dx, dz)),
            Some(_) => pairwise.push((0.0, 0.0)),
            None => {
                log::warn!("B-scan {} has no signal; using zero shift", k + 1);
                degenerate.push(k + 1);
                pairwise.push((0.0, 0.0));
            }
        }
    }
    let mut cumulative = Vec::with_capacity(pairwise.len());
    let (mut cx, mut cz) = (0.0, 0.0);
    for &(dx, dz) in &pairwise {
        cx += dx;
        cz += dz;
        cumulative.push((cx, cz));
    }
    Ok(Registration {
        pairwise,
        cumulative,
        degenerate,
        gain,
    })
}

/// Moves each B-scan by its `(dx, dz)` with bilinear interpolation.
/// Samples that fall outside the frame are zero and flagged with 1.
pub fn apply_shifts(vol: &Volume<f32>, shifts: &[(f64, f64)]) -> Result<(Volume<f32>, Volume<u8>)> {
    if shifts.len() != vol.ny {
        return Err(Error::shape(format!(
            "{} shifts for {} B-scans",
            shifts.len(),
            vol.ny
        )));
    }
    let (nx, nz) = (vol.nx, vol.nz);
    let bs = nx * nz;
    let mut data = vec![0.0f32; vol.len()];
    let mut flags = vec![0u8; vol.len()];
    data.par_chunks_mut(bs)
        .zip(flags.par_chunks_mut(bs))
        .enumerate()
        .for_each(|(y, (out, flag))| {
            let (dx, dz) = shifts[y];
            let src = vol.bscan(y);
            for x in 0..nx {
                for z in 0..nz {
                    let sx = x as f64 - dx;
                    let sz = z as f64 - dz;
                    let x0 = sx.floor();
                    let z0 = sz.floor();
                    let (fx, fz) = (sx - x0, sz - z0);
                    let mut acc = 0.0f64;
                    let mut outside = false;
                    for (ix, wx) in [(x0, 1.0 - fx), (x0 + 1.0, fx)] {
                        for (iz, wz) in [(z0, 1.0 - fz), (z0 + 1.0, fz)] {
                            let w = wx * wz;
                            if w == 0.0 {
                                continue;
                            }
                            if ix < 0.0 || iz < 0.0 || ix >= nx as f64 || iz >= nz as f64 {
                                outside = true;
                                continue;
                            }
                            acc += w * src[ix as usize * nz + iz as usize] as f64;
                        }
                    }
                    if outside {
                        flag[x * nz + z] = 1;
                        out[x * nz + z] = 0.0;
                    } else {
                        out[x * nz + z] = acc as f32;
                    }
                }
            }
        });
    Ok((
        Volume::from_vec(vol.ny, nx, nz, data)?,
        Volume::from_vec(vol.ny, nx, nz, flags)?,
    ))
}
