//! Otsu thresholding on the logarithm of a nonnegative response.

const BINS: usize = 256;
const EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OtsuResult {
    /// Threshold on the raw response (mask is `value > threshold`).
    pub threshold: f64,
    /// Threshold on `ln(value + ε)`.
    pub log_threshold: f64,
    /// No positive values, or all positives equal.
    pub degenerate: bool,
}

/// Otsu threshold over `ln(v + ε)` of the positive values, 256 bins.
pub fn otsu_log_threshold(values: &[f32]) -> OtsuResult {
    let logs: Vec<f64> = values
        .iter()
        .filter(|v| **v > 0.0 && v.is_finite())
        .map(|&v| (v as f64 + EPS).ln())
        .collect();
    let (lo, hi) = logs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if logs.is_empty() {
        log::warn!("otsu: no positive values, mask is empty");
        return OtsuResult {
            threshold: f64::INFINITY,
            log_threshold: f64::INFINITY,
            degenerate: true,
        };
    }
    if hi <= lo {
        log::warn!("otsu: constant response, threshold is degenerate");
        return OtsuResult {
            threshold: hi.exp() - EPS,
            log_threshold: hi,
            degenerate: true,
        };
    }
    let width = (hi - lo) / BINS as f64;
    let mut hist = [0u64; BINS];
    for &v in &logs {
        hist[(((v - lo) / width) as usize).min(BINS - 1)] += 1;
    }
    let total = logs.len() as f64;
    let center = |k: usize| lo + (k as f64 + 0.5) * width;
    let sum_all: f64 = (0..BINS).map(|k| hist[k] as f64 * center(k)).sum();
    let (mut w0, mut s0) = (0.0, 0.0);
    let (mut best, mut best_k) = (-1.0, 0);
    for (k, &h) in hist.iter().enumerate().take(BINS - 1) {
        w0 += h as f64;
        s0 += h as f64 * center(k);
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let d = s0 / w0 - (sum_all - s0) / w1;
        let between = w0 * w1 * d * d;
        if between > best {
            best = between;
            best_k = k;
        }
    }
    let t = lo + (best_k + 1) as f64 * width;
    OtsuResult {
        threshold: t.exp() - EPS,
        log_threshold: t,
        degenerate: false,
    }
}

/// `value > threshold` as a 0/1 mask.
pub fn apply_threshold(values: &[f32], r: &OtsuResult) -> Vec<u8> {
    values.iter().map(|&v| u8::from(v as f64 > r.threshold)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn two_deltas() {
        let v: Vec<f32> = [0.5f32, 20.0].iter().flat_map(|&x| std::iter::repeat_n(x, 50)).collect();
        let r = otsu_log_threshold(&v);
        assert!(!r.degenerate);
        assert!(r.log_threshold > 0.5f64.ln() && r.log_threshold < 20f64.ln());
        let m = apply_threshold(&v, &r);
        assert_eq!(m.iter().filter(|&&x| x == 1).count(), 50);
    }

    #[test]
    fn gaussian_mixture_in_log_domain() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let a = Normal::new(0.0, 0.1).unwrap();
        let b = Normal::new(3.0, 0.1).unwrap();
        let v: Vec<f32> = (0..20000)
            .map(|i| if i % 2 == 0 { a.sample(&mut rng) } else { b.sample(&mut rng) })
            .map(|l: f64| l.exp() as f32)
            .collect();
        let r = otsu_log_threshold(&v);
        let top_a = v.iter().step_by(2).fold(0.0f32, |m, &x| m.max(x)) as f64;
        let low_b = v.iter().skip(1).step_by(2).fold(f32::INFINITY, |m, &x| m.min(x)) as f64;
        assert!(r.threshold >= top_a && r.threshold < low_b, "{}", r.log_threshold);
        assert_eq!(apply_threshold(&v, &r).iter().filter(|&&x| x == 1).count(), 10000);
    }

    #[test]
    fn constant_and_empty_are_degenerate() {
        let c = otsu_log_threshold(&[2.0; 10]);
        assert!(c.degenerate && c.threshold >= 2.0 - 1e-9);
        let e = otsu_log_threshold(&[0.0; 10]);
        assert!(e.degenerate);
        assert!(apply_threshold(&[0.0; 10], &e).iter().all(|&x| x == 0));
    }
}
