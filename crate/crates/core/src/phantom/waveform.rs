//! Cardiac pulsatility waveforms `g(t)` with zero mean over a period.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::{E, PI};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PulseKind {
    #[default]
    None,
    GammaPulse,
    Sinusoid,
}

impl PulseKind {
    pub fn parse(s: &str) -> Result<PulseKind> {
        match s {
            "none" => Ok(PulseKind::None),
            "gamma-pulse" | "gamma_pulse" | "gamma" => Ok(PulseKind::GammaPulse),
            "sinusoid" | "sine" => Ok(PulseKind::Sinusoid),
            other => Err(Error::invalid(format!("unknown pulsatility kind `{other}`"))),
        }
    }
}

/// Rise time of the gamma pulse as a fraction of the period.
pub const GAMMA_RISE_FRACTION: f64 = 0.15;

fn gamma_shape(s: f64, tr: f64) -> f64 {
    (s / tr) * (1.0 - s / tr).exp()
}

/// Exact mean of the gamma shape over one period `T` with rise time `t_r`.
pub fn gamma_mean(period: f64, tr: f64) -> f64 {
    let q = period / tr;
    E * tr / period * (1.0 - (-q).exp() * (1.0 + q))
}

/// `g(t)` for `t` in ms. Zero-mean over each period; magnitude scales it.
pub fn waveform(kind: PulseKind, rate_hz: f64, magnitude: f64, t_ms: f64) -> f64 {
    if magnitude == 0.0 || rate_hz <= 0.0 {
        return 0.0;
    }
    let period = 1000.0 / rate_hz;
    match kind {
        PulseKind::None => 0.0,
        PulseKind::Sinusoid => magnitude * (2.0 * PI * t_ms / period).sin(),
        PulseKind::GammaPulse => {
            let tr = GAMMA_RISE_FRACTION * period;
            let s = t_ms.rem_euclid(period);
            magnitude * (gamma_shape(s, tr) - gamma_mean(period, tr))
        }
    }
}

/// String-keyed form of [`waveform`].
pub fn pulsatility_waveform(kind: &str, rate_hz: f64, magnitude: f64, t_ms: f64) -> Result<f64> {
    if magnitude < 0.0 {
        return Err(Error::invalid("pulsatility magnitude must be ≥ 0"));
    }
    Ok(waveform(PulseKind::parse(kind)?, rate_hz, magnitude, t_ms))
}
