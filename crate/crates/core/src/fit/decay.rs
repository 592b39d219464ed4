//! Bounded least-squares fit of `y = β(1 − exp(−ατ))`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Ok,
    ClampedHigh,
    ClampedLow,
    Insufficient,
}

impl FitStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            FitStatus::Ok => "ok",
            FitStatus::ClampedHigh => "clamped_high",
            FitStatus::ClampedLow => "clamped_low",
            FitStatus::Insufficient => "insufficient",
        }
    }
}

/// Box constraints and grid size for [`fit_decay`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitBounds {
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub grid_points: usize,
}

impl Default for FitBounds {
    fn default() -> Self {
        FitBounds {
            alpha_min: 0.01,
            alpha_max: 20.0,
            grid_points: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// ms⁻¹; NaN when insufficient.
    pub alpha: f64,
    pub beta: f64,
    /// Root-mean-square residual over the fitted points.
    pub residual: f64,
    pub n_voxels: usize,
    pub status: FitStatus,
}

impl DecayFit {
    pub fn insufficient(n_voxels: usize) -> Self {
        DecayFit {
            alpha: f64::NAN,
            beta: f64::NAN,
            residual: f64::NAN,
            n_voxels,
            status: FitStatus::Insufficient,
        }
    }

    pub fn is_usable(&self) -> bool {
        self.status != FitStatus::Insufficient
    }

    /// Model value at `tau`.
    pub fn eval(&self, tau: f64) -> f64 {
        self.beta * (1.0 - (-self.alpha * tau).exp())
    }
}

fn sse(tau: &[f64], y: &[f64], a: f64, b: f64) -> f64 {
    tau.iter()
        .zip(y)
        .map(|(&t, &v)| {
            let r = v - b * (1.0 - (-a * t).exp());
            r * r
        })
        .sum()
}

/// Best β for fixed α (linear least squares, clamped to [0, 1]).
fn beta_for(tau: &[f64], y: &[f64], a: f64) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (&t, &v) in tau.iter().zip(y) {
        let f = 1.0 - (-a * t).exp();
        num += v * f;
        den += f * f;
    }
    if den > 0.0 {
        (num / den).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Fits `y ≈ β(1 − e^{−ατ})` with α and β held inside `bounds` and [0, 1].
///
/// A log-spaced α grid with closed-form β picks the start, then damped
/// Gauss–Newton steps projected onto the box refine it. Fewer than two
/// finite points gives `Insufficient`.
pub fn fit_decay(tau: &[f64], y: &[f64], bounds: &FitBounds) -> DecayFit {
    let pts: Vec<(f64, f64)> = tau
        .iter()
        .zip(y)
        .filter(|(t, v)| t.is_finite() && v.is_finite())
        .map(|(&t, &v)| (t, v))
        .collect();
    if pts.len() < 2 {
        return DecayFit::insufficient(0);
    }
    let tau: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let (lo, hi) = (bounds.alpha_min, bounds.alpha_max);
    let g = bounds.grid_points.max(2);

    let (mut a, mut b, mut s) = (lo, beta_for(&tau, &y, lo), f64::INFINITY);
    for k in 0..g {
        let ak = if k + 1 == g {
            hi
        } else {
            lo * (hi / lo).powf(k as f64 / (g - 1) as f64)
        };
        let bk = beta_for(&tau, &y, ak);
        let sk = sse(&tau, &y, ak, bk);
        if sk < s {
            (a, b, s) = (ak, bk, sk);
        }
    }

    let mut lambda = 1e-3;
    for _ in 0..200 {
        let (mut jaa, mut jab, mut jbb, mut ga, mut gb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&t, &v) in tau.iter().zip(&y) {
            let e = (-a * t).exp();
            let r = v - b * (1.0 - e);
            let da = b * t * e;
            let db = 1.0 - e;
            jaa += da * da;
            jab += da * db;
            jbb += db * db;
            ga += da * r;
            gb += db * r;
        }
        let mut improved = false;
        while lambda < 1e12 {
            let m11 = jaa * (1.0 + lambda) + 1e-300;
            let m22 = jbb * (1.0 + lambda) + 1e-300;
            let det = m11 * m22 - jab * jab;
            if det.abs() < 1e-300 {
                lambda *= 10.0;
                continue;
            }
            let step_a = (m22 * ga - jab * gb) / det;
            let step_b = (m11 * gb - jab * ga) / det;
            let na = (a + step_a).clamp(lo, hi);
            let nb = (b + step_b).clamp(0.0, 1.0);
            let ns = sse(&tau, &y, na, nb);
            if ns < s {
                let small = (na - a).abs() <= 1e-14 * a.max(1.0) && (nb - b).abs() <= 1e-14;
                (a, b, s) = (na, nb, ns);
                lambda = (lambda / 10.0).max(1e-12);
                improved = !small;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }

    let rel = 1e-9;
    let status = if a >= hi * (1.0 - rel) {
        FitStatus::ClampedHigh
    } else if a <= lo * (1.0 + rel) {
        FitStatus::ClampedLow
    } else {
        FitStatus::Ok
    };
    DecayFit {
        alpha: a,
        beta: b,
        residual: (s / tau.len() as f64).sqrt(),
        n_voxels: 0,
        status,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn taus() -> Vec<f64> {
        (1..=7).map(|k| k as f64).collect()
    }

    #[test]
    fn exact_samples_are_recovered() {
        let t = taus();
        let y: Vec<f64> = t.iter().map(|&t| 0.8 * (1.0 - (-t).exp())).collect();
        let f = fit_decay(&t, &y, &FitBounds::default());
        assert!((f.alpha - 1.0).abs() < 1e-6, "{f:?}");
        assert!((f.beta - 0.8).abs() < 1e-6, "{f:?}");
        assert_eq!(f.status, FitStatus::Ok);
    }

    #[test]
    fn saturated_data_clamps_high() {
        let t = taus();
        let f = fit_decay(&t, &[0.8; 7], &FitBounds::default());
        assert_eq!(f.alpha, 20.0);
        assert_eq!(f.status, FitStatus::ClampedHigh);
        assert!((f.beta - 0.8).abs() < 1e-6);
    }

    #[test]
    fn too_few_points() {
        let f = fit_decay(&[1.0], &[0.3], &FitBounds::default());
        assert_eq!(f.status, FitStatus::Insufficient);
        assert!(f.alpha.is_nan());
    }

    #[test]
    fn static_data_is_flagged() {
        let f = fit_decay(&taus(), &[0.0; 7], &FitBounds::default());
        assert_eq!(f.beta, 0.0);
        assert_ne!(f.status, FitStatus::Ok);
    }

    #[test]
    fn absolute_values_matter() {
        let t = taus();
        let y: Vec<f64> = t.iter().map(|&t| 0.6 * (1.0 - (-0.5 * t).exp())).collect();
        let y2: Vec<f64> = y.iter().map(|v| 2.0 * v).collect();
        let a = fit_decay(&t, &y, &FitBounds::default());
        let b = fit_decay(&t, &y2, &FitBounds::default());
        assert_eq!(b.beta, 1.0);
        assert!((a.alpha - b.alpha).abs() > 1e-3);
    }
}
