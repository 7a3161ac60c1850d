//! Closed-form performance model of a Fourier-plane microlens/diffuser
//! microscope: resolution, magnification, field of view, depth of field and
//! the dioptric focal-length schedule of a multi-focal diffuser.
//!
//! Units: wavelengths, pixels and object-space lengths in micrometres; lens
//! focal lengths, pitches and pupil sizes in millimetres.
//!
//! Sign convention: a positive defocus `dz` moves the source toward the
//! objective. Such a source is relayed to a virtual point in front of the
//! diffuser, so it is brought to focus on the sensor by a *shorter* lenslet
//! focal length (`f_min` focuses the `+z` end of the range).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MM: f64 = 1000.0;
const RAYLEIGH: f64 = 1.22;

/// Phase-mask layout family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayoutKind {
    /// Regular uni-focal microlens array.
    #[serde(rename = "MLA")]
    Mla,
    /// Randomly placed uni-focal microlenses.
    #[serde(rename = "RUM")]
    Rum,
    /// Randomly placed multi-focal microlenses.
    #[serde(rename = "RMM")]
    Rmm,
}

impl LayoutKind {
    pub const ALL: [LayoutKind; 3] = [LayoutKind::Mla, LayoutKind::Rum, LayoutKind::Rmm];

    pub fn is_random(self) -> bool {
        !matches!(self, LayoutKind::Mla)
    }

    pub fn is_unifocal(self) -> bool {
        !matches!(self, LayoutKind::Rmm)
    }

    pub fn name(self) -> &'static str {
        match self {
            LayoutKind::Mla => "MLA",
            LayoutKind::Rum => "RUM",
            LayoutKind::Rmm => "RMM",
        }
    }
}

impl std::fmt::Display for LayoutKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for LayoutKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "MLA" => Ok(LayoutKind::Mla),
            "RUM" => Ok(LayoutKind::Rum),
            "RMM" => Ok(LayoutKind::Rmm),
            _ => Err(Error::InvalidArgument(format!("unknown layout {s:?}"))),
        }
    }
}

/// Scalar optical parameters of the objective, relay, diffuser and sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpticalSystem {
    pub wavelength_um: f64,
    pub medium_index: f64,
    pub obj_focal_mm: f64,
    pub obj_na: f64,
    pub obj_fov_mm: f64,
    pub pupil_diameter_mm: f64,
    pub tube_focal_mm: f64,
    pub relay_focal_mm: f64,
    pub pixel_um: f64,
    pub n_lenslets_1d: u32,
    pub pitch_mm: f64,
    pub f_ave_mm: f64,
    pub f_min_mm: f64,
    pub f_max_mm: f64,
}

impl OpticalSystem {
    /// 20x / 1.0 NA water objective with a 1:1 relay and a 5x5 diffuser,
    /// designed for a +-100 um depth range.
    pub fn reference_20x() -> Self {
        let mut sys = OpticalSystem {
            wavelength_um: 0.510,
            medium_index: 1.33,
            obj_focal_mm: 9.0,
            obj_na: 1.0,
            obj_fov_mm: 1.1,
            pupil_diameter_mm: 18.0,
            tube_focal_mm: 180.0,
            relay_focal_mm: 180.0,
            pixel_um: 2.0,
            n_lenslets_1d: 5,
            pitch_mm: 3.6,
            f_ave_mm: 58.5,
            f_min_mm: 58.5,
            f_max_mm: 58.5,
        };
        sys.set_focal_range(100.0).expect("reference design is physical");
        sys
    }

    /// Reduced-size system for simulation on a 512 x 512 sensor.
    ///
    /// Object-space optics (wavelength, NA, lenslet count, depth range) match
    /// [`OpticalSystem::reference_20x`]; the pupil is demagnified 20x onto a
    /// 0.9 mm diffuser and `f_ave` is chosen so the sensor just Nyquist-samples
    /// the in-focus spot. One lenslet sub-image then spans 90 pixels, i.e.
    /// `FOV_MLA` ~ 67.5 um.
    pub fn desk_scale() -> Self {
        let mut sys = OpticalSystem {
            wavelength_um: 0.510,
            medium_index: 1.33,
            obj_focal_mm: 9.0,
            obj_na: 1.0,
            obj_fov_mm: 0.120,
            pupil_diameter_mm: 18.0,
            tube_focal_mm: 180.0,
            relay_focal_mm: 9.0,
            pixel_um: 2.0,
            n_lenslets_1d: 5,
            pitch_mm: 0.18,
            f_ave_mm: 1.2,
            f_min_mm: 1.2,
            f_max_mm: 1.2,
        };
        sys.set_focal_range(100.0).expect("desk design is physical");
        sys
    }

    /// Set `f_min` / `f_max` for a symmetric `+-z_half_range_um` design.
    pub fn set_focal_range(&mut self, z_half_range_um: f64) -> Result<()> {
        let s = focal_length_schedule(self, z_half_range_um, 2)?;
        self.f_min_mm = s[0];
        self.f_max_mm = s[1];
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("wavelength_um", self.wavelength_um),
            ("medium_index", self.medium_index),
            ("obj_focal_mm", self.obj_focal_mm),
            ("obj_na", self.obj_na),
            ("obj_fov_mm", self.obj_fov_mm),
            ("pupil_diameter_mm", self.pupil_diameter_mm),
            ("tube_focal_mm", self.tube_focal_mm),
            ("relay_focal_mm", self.relay_focal_mm),
            ("pixel_um", self.pixel_um),
            ("pitch_mm", self.pitch_mm),
            ("f_ave_mm", self.f_ave_mm),
            ("f_min_mm", self.f_min_mm),
            ("f_max_mm", self.f_max_mm),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidSystem(format!("{name} must be positive, got {v}")));
            }
        }
        if self.obj_na > self.medium_index {
            return Err(Error::InvalidSystem(format!(
                "obj_na {} exceeds medium index {}",
                self.obj_na, self.medium_index
            )));
        }
        if self.n_lenslets_1d < 2 {
            return Err(Error::InvalidSystem("n_lenslets_1d must be >= 2".into()));
        }
        let lhs = self.n_lenslets_1d as f64 * self.pitch_mm;
        let rhs = self.relayed_pupil_diameter_mm();
        if ((lhs - rhs) / rhs).abs() > 1e-9 {
            return Err(Error::InvalidSystem(format!(
                "N * pitch = {lhs} mm does not match the relayed pupil diameter {rhs} mm"
            )));
        }
        if !(self.f_min_mm <= self.f_ave_mm && self.f_ave_mm <= self.f_max_mm) {
            return Err(Error::InvalidSystem(format!(
                "focal lengths out of order: f_min {} f_ave {} f_max {}",
                self.f_min_mm, self.f_ave_mm, self.f_max_mm
            )));
        }
        Ok(())
    }

    /// `(f_RL / f_TL) * 2 NA f_obj`, in mm.
    pub fn relayed_pupil_diameter_mm(&self) -> f64 {
        self.relay_focal_mm / self.tube_focal_mm * 2.0 * self.obj_na * self.obj_focal_mm
    }

    /// Defocus curvature coefficient `(f_TL / (f_RL f_obj))^2`, in 1/mm^2:
    /// a source at `dz` (mm) is relayed to a point at `1 / (k dz)` from the
    /// diffuser.
    pub fn defocus_coefficient(&self) -> f64 {
        (self.tube_focal_mm / (self.relay_focal_mm * self.obj_focal_mm)).powi(2)
    }

    /// Object-space sampling pitch of the sensor, `s / M`, in um.
    pub fn object_pixel_um(&self) -> f64 {
        self.pixel_um / magnification(self)
    }

    /// Diffuser-plane tilt (radians) produced by a lateral object offset in um.
    pub fn pupil_tilt(&self, offset_um: f64) -> f64 {
        offset_um / MM * self.tube_focal_mm / (self.obj_focal_mm * self.relay_focal_mm)
    }
}

/// Derived performance figures for an [`OpticalSystem`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignReport {
    pub na_eff: f64,
    pub magnification: f64,
    pub r_lateral_um: f64,
    pub r_axial_um: f64,
    pub dof_microlens_um: f64,
    pub fov_mla_um: f64,
    pub fov_random_um: f64,
    pub depth_range_upper_bound_um: f64,
    /// Half the upper bound: adjacent lenslet depths of field overlap by half.
    pub depth_range_design_um: f64,
    pub nyquist_pixel_um: f64,
}

impl DesignReport {
    pub fn from_system(sys: &OpticalSystem) -> Result<Self> {
        sys.validate()?;
        let m = magnification(sys);
        let r_lat = lateral_resolution(sys);
        let dof = dof_microlens(sys);
        let n2 = (sys.n_lenslets_1d as f64).powi(2);
        Ok(DesignReport {
            na_eff: effective_na(sys),
            magnification: m,
            r_lateral_um: r_lat,
            r_axial_um: axial_resolution(sys)?,
            dof_microlens_um: dof,
            fov_mla_um: fov(sys, LayoutKind::Mla),
            fov_random_um: fov(sys, LayoutKind::Rmm),
            depth_range_upper_bound_um: n2 * dof,
            depth_range_design_um: 0.5 * n2 * dof,
            nyquist_pixel_um: m * r_lat / 2.0,
        })
    }

    /// Whether the sensor pixel satisfies `s <= M R_lateral / 2`.
    pub fn is_nyquist_sampled(&self, pixel_um: f64) -> bool {
        pixel_um <= self.nyquist_pixel_um
    }
}

/// `NA_obj / N`.
pub fn effective_na(sys: &OpticalSystem) -> f64 {
    sys.obj_na / sys.n_lenslets_1d as f64
}

/// Rayleigh limit of one lenslet sub-aperture, `1.22 lambda N / (2 NA_obj)`.
pub fn lateral_resolution(sys: &OpticalSystem) -> f64 {
    RAYLEIGH * sys.wavelength_um * sys.n_lenslets_1d as f64 / (2.0 * sys.obj_na)
}

/// Object-to-sensor lateral magnification `(f_TL / f_obj) (f_ave / f_RL)`.
pub fn magnification(sys: &OpticalSystem) -> f64 {
    (sys.tube_focal_mm / sys.obj_focal_mm) * (sys.f_ave_mm / sys.relay_focal_mm)
}

/// Radius of the geometric blur of a uni-focal lenslet on the sensor, in um,
/// for a source defocused by `defocus_um`.
pub fn circle_of_confusion(sys: &OpticalSystem, defocus_um: f64) -> f64 {
    // (p f_ave / 2) (f_TL^2 |dz|) / (f_RL^2 f_obj^2); p f_ave / f_obj^2 is
    // dimensionless so the result carries the unit of dz.
    (sys.pitch_mm * sys.f_ave_mm / 2.0) * sys.tube_focal_mm.powi(2) * defocus_um.abs()
        / (sys.relay_focal_mm.powi(2) * sys.obj_focal_mm.powi(2))
}

/// Off-focus lateral resolution in object space: the sensor blur radius
/// divided by the magnification. Its slope in `|dz|` equals `NA_eff`.
pub fn defocused_lateral_resolution(sys: &OpticalSystem, defocus_um: f64) -> f64 {
    circle_of_confusion(sys, defocus_um) / magnification(sys)
}

/// In-focus axial resolution `N^2 / (N - 1) * 1.22 lambda / (2 NA_obj^2)`.
pub fn axial_resolution(sys: &OpticalSystem) -> Result<f64> {
    Ok(axial_prefactor(sys)? * lateral_resolution(sys))
}

/// Off-focus axial resolution: the in-focus relation with the lateral term
/// replaced by the object-space circle of confusion.
pub fn defocused_axial_resolution(sys: &OpticalSystem, defocus_um: f64) -> Result<f64> {
    Ok(axial_prefactor(sys)? * defocused_lateral_resolution(sys, defocus_um))
}

/// `N / ((N - 1) NA_obj)`, the ratio between axial and lateral resolution.
fn axial_prefactor(sys: &OpticalSystem) -> Result<f64> {
    let n = sys.n_lenslets_1d;
    if n < 2 {
        return Err(Error::InvalidSystem(
            "axial resolution needs at least 2 lenslets across the pupil (no disparity)".into(),
        ));
    }
    let n = n as f64;
    Ok(n / ((n - 1.0) * sys.obj_na))
}

/// In-focus field of view in um.
pub fn fov(sys: &OpticalSystem, layout: LayoutKind) -> f64 {
    match layout {
        LayoutKind::Mla => sys.pitch_mm * MM / magnification(sys),
        LayoutKind::Rum | LayoutKind::Rmm => sys.obj_fov_mm * MM,
    }
}

/// Depth of field of a single lenslet,
/// `lambda n_r / NA_eff^2 + n_r s / (M NA_eff)`.
pub fn dof_microlens(sys: &OpticalSystem) -> f64 {
    let na = effective_na(sys);
    sys.wavelength_um * sys.medium_index / (na * na)
        + sys.medium_index * sys.pixel_um / (magnification(sys) * na)
}

/// `count` lenslet focal lengths (mm) whose optical powers are evenly spaced
/// between the lenses that focus `+z` (first entry, `f_min`) and `-z` (last
/// entry, `f_max`).
pub fn focal_length_schedule(
    sys: &OpticalSystem,
    z_half_range_um: f64,
    count: usize,
) -> Result<Vec<f64>> {
    if count < 2 {
        return Err(Error::InvalidArgument("schedule needs count >= 2".into()));
    }
    if !(z_half_range_um >= 0.0 && z_half_range_um.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "z half range must be non-negative, got {z_half_range_um}"
        )));
    }
    let base = 1.0 / sys.f_ave_mm;
    let dp = sys.defocus_coefficient() * z_half_range_um / MM;
    let (p_min_f, p_max_f) = (base + dp, base - dp);
    let step = (p_max_f - p_min_f) / (count - 1) as f64;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let power = p_min_f + step * i as f64;
        if !(power > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "non-physical focal length for power {power} 1/mm (range too large)"
            )));
        }
        out.push(1.0 / power);
    }
    Ok(out)
}

/// Object-space depth (um) brought to focus on the sensor by a lenslet of
/// focal length `focal_mm`.
pub fn focus_depth_um(sys: &OpticalSystem, focal_mm: f64) -> f64 {
    (1.0 / focal_mm - 1.0 / sys.f_ave_mm) / sys.defocus_coefficient() * MM
}
