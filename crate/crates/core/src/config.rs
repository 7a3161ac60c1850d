//! Experiment configuration: a single strict JSON document.

use serde::{Deserialize, Serialize};

use crate::analysis::{DepthParams, FovParams, TwoPointParams};
use crate::design::{LayoutKind, OpticalSystem};
use crate::error::{Error, Result};
use crate::recon::{RlNormalization, SolverConfig};
use crate::wavesim::{depth_grid, SimParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReconMethod {
    #[default]
    Admm,
    RichardsonLucy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconConfig {
    pub method: ReconMethod,
    pub rl_iters: usize,
    pub rl_normalization: RlNormalization,
    pub solver: SolverConfig,
    /// Lateral edge of the reconstructed volume in voxels.
    pub lateral_px: usize,
    /// Voxel pitch; `None` uses the object-space sensor pixel.
    pub lateral_pitch_um: Option<f64>,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            method: ReconMethod::Admm,
            rl_iters: 8,
            rl_normalization: RlNormalization::Sensitivity,
            solver: SolverConfig::default(),
            lateral_px: 96,
            lateral_pitch_um: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Resolution,
    Fov,
    Depthrange,
}

impl std::str::FromStr for StudyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "resolution" => Ok(StudyKind::Resolution),
            "fov" => Ok(StudyKind::Fov),
            "depthrange" | "depth" => Ok(StudyKind::Depthrange),
            _ => Err(Error::Config(format!("unknown study '{s}' (resolution, fov, depthrange)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResolutionStudyConfig {
    pub z_list_um: Vec<f64>,
    pub axial: bool,
    pub two_point: TwoPointParams,
}

impl Default for ResolutionStudyConfig {
    fn default() -> Self {
        Self {
            z_list_um: depth_grid(100.0, 10.0),
            axial: false,
            two_point: TwoPointParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    /// Study run by `study` when none is named on the command line.
    pub kind: Option<StudyKind>,
    pub layouts: Vec<LayoutKind>,
    pub resolution: ResolutionStudyConfig,
    pub fov: FovParams,
    pub depth: DepthParams,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            kind: None,
            layouts: LayoutKind::ALL.to_vec(),
            resolution: ResolutionStudyConfig::default(),
            fov: FovParams::default(),
            depth: DepthParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: OpticalSystem,
    pub layout_kind: LayoutKind,
    pub seed: u64,
    /// Half of the depth range the diffuser focal lengths are spread over.
    pub design_half_range_um: f64,
    pub sim: SimParams,
    /// Depth planes of the `psfs` command.
    pub psf_z_um: Vec<f64>,
    pub noise_level: f64,
    pub recon: ReconConfig,
    pub study: StudyConfig,
    pub out_dir: Option<std::path::PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            system: OpticalSystem::desk_scale(),
            layout_kind: LayoutKind::Rmm,
            seed: 0,
            design_half_range_um: 100.0,
            sim: SimParams::default(),
            psf_z_um: depth_grid(100.0, 10.0),
            noise_level: 0.0,
            recon: ReconConfig::default(),
            study: StudyConfig::default(),
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| match e {
            Error::Config(m) => Error::Config(m),
            other => Error::Config(other.to_string()),
        };
        self.system.validate().map_err(cfg)?;
        self.sim.validate().map_err(cfg)?;
        if !(self.design_half_range_um >= 0.0 && self.design_half_range_um.is_finite()) {
            return Err(Error::Config("design_half_range_um must be nonnegative".into()));
        }
        if self.psf_z_um.is_empty() || self.psf_z_um.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("psf_z_um must be non-empty and strictly increasing".into()));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(Error::Config("noise_level must be nonnegative".into()));
        }
        if self.recon.rl_iters == 0 {
            return Err(Error::Config("recon.rl_iters must be at least 1".into()));
        }
        self.recon.solver.validate()?;
        if self.recon.lateral_px == 0 {
            return Err(Error::Config("recon.lateral_px must be positive".into()));
        }
        if let Some(p) = self.recon.lateral_pitch_um {
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::Config("recon.lateral_pitch_um must be positive".into()));
            }
        }
        if self.study.layouts.is_empty() {
            return Err(Error::Config("study.layouts must not be empty".into()));
        }
        if self.study.resolution.z_list_um.is_empty() {
            return Err(Error::Config("study.resolution.z_list_um must not be empty".into()));
        }
        self.study.resolution.two_point.validate()?;
        self.study.fov.validate()?;
        self.study.depth.validate()
    }

    /// Canonical serialization used for hashing.
    pub fn canonical_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default() {
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected_at_every_level() {
        for doc in [
            r#"{"sede": 1}"#,
            r#"{"recon": {"solver": {"tau": 1e-3, "rho": 2}}}"#,
            r#"{"study": {"fov": {"blocks": 3}}}"#,
            r#"{"sim": {"sensor": 256}}"#,
        ] {
            assert!(matches!(ExperimentConfig::from_json(doc), Err(Error::Config(_))), "{doc}");
        }
    }

    #[test]
    fn round_trip() {
        let mut c = ExperimentConfig::default();
        c.seed = 42;
        c.layout_kind = LayoutKind::Mla;
        c.study.kind = Some(StudyKind::Fov);
        let back = ExperimentConfig::from_json(&c.canonical_json().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        assert!(ExperimentConfig::from_json(r#"{"recon": {"solver": {"max_iters": 0}}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"psf_z_um": [1, 0]}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"sim": {"oversample": 4}}"#).is_err());
    }
}
