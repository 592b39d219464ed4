//! Pipeline configuration (TOML). Every tunable has a recorded default.

use crate::fit::FitBounds;
use crate::layers::LayerConfig;
use crate::octa::OctaMode;
use crate::pulse::PulseConfig;
use crate::render::RenderConfig;
use crate::vessels::VesselnessConfig;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: InputConfig,
    pub octa: OctaConfig,
    pub layers: LayersConfig,
    pub vessels: VesselsConfig,
    pub fit: FitConfig,
    pub pulse: PulseStage,
    pub render: RenderConfig,
    pub analysis: AnalysisConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    /// Phantom spec (TOML) to synthesize, relative to the config file.
    pub phantom: Option<PathBuf>,
    /// Existing `.vvol` OCT volume.
    pub volume: Option<PathBuf>,
    /// Overrides the phantom seed.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OctaConfig {
    pub mode: OctaMode,
    pub register: bool,
    pub upsample: usize,
    /// Corrections smaller than this (pixels) are treated as no motion.
    pub min_shift_px: f64,
    /// Minimum relative gain of the correlation peak over zero shift.
    pub min_gain: f64,
}

impl Default for OctaConfig {
    fn default() -> Self {
        OctaConfig {
            mode: OctaMode::Amplitude,
            register: true,
            upsample: 10,
            min_shift_px: 0.25,
            min_gain: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LayersConfig {
    #[serde(flatten)]
    pub segment: LayerConfig,
    pub overrides: Option<PathBuf>,
    /// RNFL plexus starts this far below the ILM.
    pub rnflp_offset_um: f64,
    /// Deep plexus ends this far above the RPE.
    pub dcp_rpe_offset_um: f64,
}

impl Default for LayersConfig {
    fn default() -> Self {
        LayersConfig {
            segment: LayerConfig::default(),
            overrides: None,
            rnflp_offset_um: 19.0,
            dcp_rpe_offset_um: 80.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VesselsConfig {
    #[serde(flatten)]
    pub vesselness: VesselnessConfig,
    /// Slabs processed independently, in ID order.
    pub slabs: Vec<String>,
    pub min_spur_px: usize,
    /// OOF radius as a multiple of the A-scan spacing.
    pub oof_radius_factor: f64,
    /// OOF Gaussian pre-smoothing; defaults to the A-scan spacing.
    pub oof_sigma_um: Option<f64>,
    /// Voxels with `|λ2| < ratio·|λ1|` are dropped before thresholding.
    pub oof_min_eig_ratio: f64,
}

impl Default for VesselsConfig {
    fn default() -> Self {
        VesselsConfig {
            vesselness: VesselnessConfig::default(),
            slabs: vec!["scp_icp".into(), "dcp".into()],
            min_spur_px: 5,
            oof_radius_factor: 2.0,
            oof_sigma_um: None,
            oof_min_eig_ratio: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub n_min: usize,
    #[serde(flatten)]
    pub bounds: FitBounds,
    /// Choroid mode cuboid `(fast, slow, axial)` µm.
    pub cuboid_um: (f64, f64, f64),
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            n_min: 10,
            bounds: FitBounds::default(),
            cuboid_um: (53.0, 53.0, 8.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PulseStage {
    pub enabled: bool,
    #[serde(flatten)]
    pub config: PulseConfig,
}

impl Default for PulseStage {
    fn default() -> Self {
        PulseStage {
            enabled: true,
            config: PulseConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Fovea center `(slow, fast)` in µm from the scan origin; FOV center if unset.
    pub center_um: Option<(f64, f64)>,
    pub eccentricity_um: f64,
    pub nasal_right: bool,
    /// Segment matching radius for real-data cross-protocol comparisons.
    pub match_distance_um: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            center_um: None,
            eccentricity_um: 1500.0,
            nasal_right: true,
            match_distance_um: 15.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Also write the OCTA stack and OOF mask volumes.
    pub save_volumes: bool,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Loads a config; relative input paths are resolved against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(q) = p {
                if q.is_relative() {
                    *q = base.join(&q);
                }
            }
        };
        fix(&mut cfg.input.phantom);
        fix(&mut cfg.input.volume);
        fix(&mut cfg.layers.overrides);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = PipelineConfig::default();
        let back = PipelineConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(PipelineConfig::from_toml("").unwrap(), c);
    }

    #[test]
    fn partial_and_unknown_keys() {
        let c = PipelineConfig::from_toml("[fit]\nn_min = 25\n[octa]\nmode = \"complex\"\n").unwrap();
        assert_eq!(c.fit.n_min, 25);
        assert_eq!(c.octa.mode, OctaMode::Complex);
        assert!(PipelineConfig::from_toml("[fitt]\nn_min = 3\n").is_err());
        assert!(PipelineConfig::from_toml("[octa]\nregistr = true\n").is_err());
    }
}
