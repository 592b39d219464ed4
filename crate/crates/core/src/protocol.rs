//! Scan protocol metadata and its validation.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Acquisition protocol for a repeated-B-scan OCTA volume.
///
/// Lengths are in µm (FOV in mm), times in ms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanProtocol {
    /// (fast, slow) field of view in mm.
    pub fov_mm: (f64, f64),
    /// Fundamental interscan time Δt in ms.
    pub dt_fundamental_ms: f64,
    /// Number of repeated B-scans N at each slow position.
    pub n_repeats: usize,
    /// Transverse sampling in µm.
    pub ascan_spacing_um: f64,
    /// Depth sampling in µm.
    #[serde(default = "default_axial_spacing")]
    pub axial_spacing_um: f64,
    pub ascans_per_bscan: usize,
    pub n_bscans: usize,
    /// Number of split-spectrum bands L.
    #[serde(default = "default_bands")]
    pub n_bands: usize,
    pub duty_cycle: f64,
}

fn default_axial_spacing() -> f64 {
    2.7
}

fn default_bands() -> usize {
    1
}

/// A single invariant violation reported by [`ScanProtocol::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    TooFewRepeats,
    NonPositiveInterscanTime,
    NoBands,
    EmptyGrid(&'static str),
    DutyCycle,
    NonPositiveSpacing(&'static str),
    NonPositiveFov,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TooFewRepeats => write!(f, "n_repeats < 2"),
            Violation::NonPositiveInterscanTime => write!(f, "dt_fundamental_ms ≤ 0"),
            Violation::NoBands => write!(f, "n_bands < 1"),
            Violation::EmptyGrid(name) => write!(f, "{name} < 1"),
            Violation::DutyCycle => write!(f, "duty_cycle outside (0, 1]"),
            Violation::NonPositiveSpacing(name) => write!(f, "{name} ≤ 0"),
            Violation::NonPositiveFov => write!(f, "fov_mm ≤ 0"),
        }
    }
}

impl ScanProtocol {
    /// 3 mm × 3 mm protocol: Δt = 1 ms, 8 repeats, 6.7 µm spacing, 450 × 450.
    pub fn preset_3x3() -> Self {
        ScanProtocol {
            fov_mm: (3.0, 3.0),
            dt_fundamental_ms: 1.0,
            n_repeats: 8,
            ascan_spacing_um: 6.7,
            axial_spacing_um: 2.7,
            ascans_per_bscan: 450,
            n_bscans: 450,
            n_bands: 3,
            duty_cycle: 0.75,
        }
    }

    /// 5 mm × 5 mm protocol: Δt = 1.25 ms, 5 repeats, 8.8 µm spacing, 570 × 570.
    pub fn preset_5x5() -> Self {
        ScanProtocol {
            fov_mm: (5.0, 5.0),
            dt_fundamental_ms: 1.25,
            n_repeats: 5,
            ascan_spacing_um: 8.8,
            axial_spacing_um: 2.7,
            ascans_per_bscan: 570,
            n_bscans: 570,
            n_bands: 3,
            duty_cycle: 0.76,
        }
    }

    /// Looks up a named preset (`3x3`, `5x5`).
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "3x3" => Some(Self::preset_3x3()),
            "5x5" => Some(Self::preset_5x5()),
            _ => None,
        }
    }

    /// Same timing and sampling with the FOV shrunk to `fov_mm` on both axes.
    pub fn scaled_fov(&self, fov_mm: f64) -> Self {
        let n = (fov_mm * 1000.0 / self.ascan_spacing_um).round().max(1.0) as usize;
        ScanProtocol {
            fov_mm: (fov_mm, fov_mm),
            ascans_per_bscan: n,
            n_bscans: n,
            ..self.clone()
        }
    }

    /// All invariant violations; empty when the protocol is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.n_repeats < 2 {
            out.push(Violation::TooFewRepeats);
        }
        if !(self.dt_fundamental_ms > 0.0) {
            out.push(Violation::NonPositiveInterscanTime);
        }
        if self.n_bands < 1 {
            out.push(Violation::NoBands);
        }
        if self.ascans_per_bscan < 1 {
            out.push(Violation::EmptyGrid("ascans_per_bscan"));
        }
        if self.n_bscans < 1 {
            out.push(Violation::EmptyGrid("n_bscans"));
        }
        if !(self.duty_cycle > 0.0 && self.duty_cycle <= 1.0) {
            out.push(Violation::DutyCycle);
        }
        if !(self.ascan_spacing_um > 0.0) {
            out.push(Violation::NonPositiveSpacing("ascan_spacing_um"));
        }
        if !(self.axial_spacing_um > 0.0) {
            out.push(Violation::NonPositiveSpacing("axial_spacing_um"));
        }
        if !(self.fov_mm.0 > 0.0 && self.fov_mm.1 > 0.0) {
            out.push(Violation::NonPositiveFov);
        }
        out
    }

    pub fn ensure_valid(&self) -> crate::Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            let msgs: Vec<String> = v.iter().map(|v| v.to_string()).collect();
            Err(crate::Error::Protocol(msgs.join("; ")))
        }
    }

    /// Slow-axis sampling in µm (B-scan to B-scan distance).
    pub fn bscan_spacing_um(&self) -> f64 {
        self.fov_mm.1 * 1000.0 / self.n_bscans as f64
    }

    /// Effective interscan times Δt, 2Δt, …, (N−1)Δt.
    pub fn interscan_times(&self) -> Vec<f64> {
        (1..self.n_repeats)
            .map(|m| m as f64 * self.dt_fundamental_ms)
            .collect()
    }

    /// Time between successive slow positions, N·Δt.
    pub fn slow_period_ms(&self) -> f64 {
        self.n_repeats as f64 * self.dt_fundamental_ms
    }

    /// Acquisition time of repeat `j` at slow position `y`.
    pub fn acquisition_time_ms(&self, y: usize, j: usize) -> f64 {
        (y * self.n_repeats + j) as f64 * self.dt_fundamental_ms
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        assert!(ScanProtocol::preset_3x3().validate().is_empty());
        assert!(ScanProtocol::preset_5x5().validate().is_empty());
    }

    #[test]
    fn single_repeat_is_rejected() {
        let p = ScanProtocol {
            n_repeats: 1,
            ..ScanProtocol::preset_3x3()
        };
        let v = p.validate();
        assert_eq!(v, vec![Violation::TooFewRepeats]);
        assert_eq!(v[0].to_string(), "n_repeats < 2");
    }

    #[test]
    fn zero_interscan_time_is_rejected() {
        let p = ScanProtocol {
            dt_fundamental_ms: 0.0,
            ..ScanProtocol::preset_3x3()
        };
        let v = p.validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].to_string(), "dt_fundamental_ms ≤ 0");
    }

    #[test]
    fn violations_accumulate() {
        let p = ScanProtocol {
            n_repeats: 0,
            dt_fundamental_ms: -1.0,
            n_bands: 0,
            duty_cycle: 1.5,
            ..ScanProtocol::preset_3x3()
        };
        assert_eq!(p.validate().len(), 4);
    }

    #[test]
    fn scaled_fov_keeps_sampling() {
        let p = ScanProtocol::preset_3x3().scaled_fov(1.0);
        assert_eq!(p.ascans_per_bscan, 149);
        assert_eq!(p.dt_fundamental_ms, 1.0);
        assert_eq!(p.interscan_times(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
    }
}
