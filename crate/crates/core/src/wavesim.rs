//! Scalar wave-optics PSF simulation.
//!
//! A point source is represented by its field at the relayed pupil, which
//! coincides with the diffuser: a spherical wave whose curvature encodes the
//! source depth and a linear phase encoding its lateral offset. The field is
//! multiplied by the diffuser transmission, propagated to the sensor at
//! `f_ave` with a band-limited angular spectrum method, and the intensity is
//! area-integrated onto sensor pixels.

use std::f64::consts::PI;

use ndarray::{s, Array2, Array3, ArrayView2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::design::{magnification, OpticalSystem};
use crate::error::{Error, Result};
use crate::fft::{fftshift, freq_index, ifftshift, next_fast_len, Fft2};
use crate::par;
use crate::surface::{grid_coord, phase_screen, DiffuserSurface};

/// Spectral energy fraction beyond the band limit tolerated by
/// [`angular_spectrum_propagate`].
pub const BAND_LIMIT_LEAKAGE: f64 = 1e-4;
/// Below this `|q| rho_max` the defocus phase uses its paraxial form.
const PARAXIAL_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct FieldGrid {
    /// Complex amplitude, origin at index `n / 2` on both axes.
    pub amplitude: Array2<Complex64>,
    pub pitch_um: f64,
    pub wavelength_um: f64,
}

impl FieldGrid {
    pub fn power(&self) -> f64 {
        self.amplitude.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.pitch_um * self.pitch_um
    }

    pub fn intensity(&self) -> Array2<f64> {
        self.amplitude.mapv(|v| v.norm_sqr())
    }
}

/// Ordered set of intensity kernels, `[z][y][x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PsfStack {
    pub kernels: Array3<f64>,
    pub z_positions_um: Vec<f64>,
    pub sensor_pitch_um: f64,
}

impl PsfStack {
    pub fn new(kernels: Array3<f64>, z_positions_um: Vec<f64>, sensor_pitch_um: f64) -> Result<Self> {
        if kernels.dim().0 != z_positions_um.len() {
            return Err(Error::Shape(format!(
                "{} kernels but {} depths",
                kernels.dim().0,
                z_positions_um.len()
            )));
        }
        if z_positions_um.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("PSF depths must be strictly increasing".into()));
        }
        if kernels.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("PSF kernels must be finite and nonnegative".into()));
        }
        if !(sensor_pitch_um > 0.0) {
            return Err(Error::InvalidArgument("sensor pitch must be positive".into()));
        }
        Ok(Self {
            kernels,
            z_positions_um,
            sensor_pitch_um,
        })
    }

    pub fn depth_count(&self) -> usize {
        self.z_positions_um.len()
    }

    pub fn kernel_shape(&self) -> (usize, usize) {
        let (_, h, w) = self.kernels.dim();
        (h, w)
    }

    pub fn kernel(&self, i: usize) -> ArrayView2<'_, f64> {
        self.kernels.index_axis(ndarray::Axis(0), i)
    }

    /// Sub-stack of the listed depth indices.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let (h, w) = self.kernel_shape();
        let mut k = Array3::zeros((idx.len(), h, w));
        let mut z = Vec::with_capacity(idx.len());
        for (o, &i) in idx.iter().enumerate() {
            k.index_axis_mut(ndarray::Axis(0), o).assign(&self.kernel(i));
            z.push(self.z_positions_um[i]);
        }
        Self::new(k, z, self.sensor_pitch_um)
    }

    /// Index of the depth closest to `z_um`.
    pub fn nearest(&self, z_um: f64) -> usize {
        let mut best = 0;
        for (i, z) in self.z_positions_um.iter().enumerate() {
            if (z - z_um).abs() < (self.z_positions_um[best] - z_um).abs() {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Apodization {
    /// Uniform amplitude inside the pupil.
    #[default]
    Uniform,
    /// Aplanatic objective, amplitude `cos(theta)^(-1/2)` with
    /// `sin(theta) = rho NA / (n rho_max)`.
    SineCondition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimParams {
    /// Sensor size in pixels (square).
    pub sensor_px: usize,
    /// Simulation samples per sensor pixel along each axis (odd).
    pub oversample: usize,
    /// Simulation window relative to the sensor extent.
    pub guard: f64,
    /// Refractive index of the diffuser material.
    pub mask_index: f64,
    pub apodization: Apodization,
    /// Largest `|z|` accepted, in um.
    pub max_depth_um: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            sensor_px: 512,
            oversample: 5,
            guard: 1.25,
            mask_index: 1.56,
            apodization: Apodization::Uniform,
            max_depth_um: 120.0,
        }
    }
}

impl SimParams {
    /// Simulation sample pitch in um.
    pub fn sim_pitch_um(&self, sys: &OpticalSystem) -> f64 {
        sys.pixel_um / self.oversample as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.sensor_px == 0 {
            return Err(Error::InvalidArgument("sensor_px must be positive".into()));
        }
        if self.oversample == 0 || self.oversample % 2 == 0 {
            return Err(Error::InvalidArgument("oversample must be odd".into()));
        }
        if !(self.guard >= 1.0) {
            return Err(Error::InvalidArgument("guard must be >= 1".into()));
        }
        if !(self.mask_index > 1.0) {
            return Err(Error::InvalidArgument("mask_index must exceed 1".into()));
        }
        if !(self.max_depth_um > 0.0) {
            return Err(Error::InvalidArgument("max_depth_um must be positive".into()));
        }
        Ok(())
    }
}

/// Matsushima-Shimobaba band limit (cycles/um) along one axis of an
/// `n`-sample window of pitch `dx_um` for propagation distance `d_um`.
pub fn band_limit(n: usize, dx_um: f64, wavelength_um: f64, d_um: f64) -> f64 {
    let du = 1.0 / (n as f64 * dx_um);
    1.0 / (wavelength_um * ((2.0 * du * d_um).powi(2) + 1.0).sqrt())
}

/// Band-limited angular-spectrum transfer function in FFT order.
fn transfer_function(n: usize, dx_um: f64, wavelength_um: f64, d_um: f64) -> Array2<Complex64> {
    let inv_l2 = 1.0 / (wavelength_um * wavelength_um);
    let lim = band_limit(n, dx_um, wavelength_um, d_um);
    let df = 1.0 / (n as f64 * dx_um);
    let mut h = Array2::<Complex64>::zeros((n, n));
    par::for_each_row(&mut h, |i, mut row| {
        let fy = freq_index(i, n) * df;
        for (j, v) in row.iter_mut().enumerate() {
            let fx = freq_index(j, n) * df;
            let arg = inv_l2 - fx * fx - fy * fy;
            *v = if arg > 0.0 && fx.abs() <= lim && fy.abs() <= lim {
                Complex64::from_polar(1.0, 2.0 * PI * d_um * arg.sqrt())
            } else {
                Complex64::new(0.0, 0.0)
            };
        }
    });
    h
}

/// Free-space propagation over `distance_mm` by the angular spectrum method.
///
/// Evanescent components and frequencies beyond the sampling band limit are
/// removed; if more than [`BAND_LIMIT_LEAKAGE`] of the spectral energy would
/// be discarded by the band limit the call fails.
pub fn angular_spectrum_propagate(field: &FieldGrid, distance_mm: f64) -> Result<FieldGrid> {
    let (r, c) = field.amplitude.dim();
    if r != c {
        return Err(Error::Shape(format!("field must be square, got {r}x{c}")));
    }
    if distance_mm == 0.0 {
        return Ok(field.clone());
    }
    let n = r;
    let d_um = distance_mm * 1000.0;
    let dx = field.pitch_um;
    let fft = Fft2::new(n, n);
    let mut spec = ifftshift(&field.amplitude);
    fft.forward(&mut spec);

    let lim = band_limit(n, dx, field.wavelength_um, d_um.abs());
    let df = 1.0 / (n as f64 * dx);
    let mut total = 0.0;
    let mut outside = 0.0;
    for ((i, j), v) in spec.indexed_iter() {
        let e = v.norm_sqr();
        total += e;
        let (fy, fx) = (freq_index(i, n) * df, freq_index(j, n) * df);
        if fx.abs() > lim || fy.abs() > lim {
            outside += e;
        }
    }
    if total > 0.0 && outside / total > BAND_LIMIT_LEAKAGE {
        return Err(Error::Aliasing(format!(
            "{:.3e} of the spectral energy lies beyond the band limit {lim:.4} cycles/um \
             for a {distance_mm} mm propagation on a {n} x {dx} um grid",
            outside / total
        )));
    }
    let h = transfer_function(n, dx, field.wavelength_um, d_um);
    spec.zip_mut_with(&h, |a, b| *a *= *b);
    fft.inverse(&mut spec);
    Ok(FieldGrid {
        amplitude: fftshift(&spec),
        pitch_um: dx,
        wavelength_um: field.wavelength_um,
    })
}

/// Source-dependent phase (radians) at pupil coordinate `(x, y)` in um.
#[derive(Debug, Clone, Copy)]
struct SourcePhase {
    k: f64,
    /// Wavefront curvature in 1/um; positive = diverging.
    q: f64,
    tilt: [f64; 2],
    paraxial: bool,
}

impl SourcePhase {
    fn new(sys: &OpticalSystem, src: [f64; 3], rho_max_um: f64) -> Self {
        let q = sys.defocus_coefficient() * src[2] / 1000.0 / 1000.0;
        Self {
            k: 2.0 * PI / sys.wavelength_um,
            q,
            tilt: [sys.pupil_tilt(src[0]), sys.pupil_tilt(src[1])],
            paraxial: (q * rho_max_um).abs() < PARAXIAL_THRESHOLD,
        }
    }

    #[inline]
    fn at(&self, x: f64, y: f64) -> f64 {
        let r2 = x * x + y * y;
        let defocus = if self.paraxial {
            0.5 * self.q * r2
        } else {
            self.q * r2 / (1.0 + (1.0 + self.q * self.q * r2).sqrt())
        };
        self.k * (defocus + self.tilt[0] * x + self.tilt[1] * y)
    }
}

/// Pupil-plane field of a point source, without the diffuser, on an
/// `n x n` grid of pitch `dx_um` centered at `n / 2`.
pub fn pupil_field(
    sys: &OpticalSystem,
    apodization: Apodization,
    source_xyz_um: [f64; 3],
    n: usize,
    dx_um: f64,
) -> Result<FieldGrid> {
    sys.validate()?;
    check_source_fov(sys, source_xyz_um)?;
    let rp = pupil_radius_um(sys);
    let ph = SourcePhase::new(sys, source_xyz_um, rp);
    let mut a = Array2::<Complex64>::zeros((n, n));
    par::for_each_row(&mut a, |i, mut row| {
        let y = grid_coord(i, n, dx_um);
        for (j, v) in row.iter_mut().enumerate() {
            let x = grid_coord(j, n, dx_um);
            let amp = apodize(sys, apodization, (x * x + y * y).sqrt(), rp);
            if amp > 0.0 {
                *v = Complex64::from_polar(amp, ph.at(x, y));
            }
        }
    });
    Ok(FieldGrid {
        amplitude: a,
        pitch_um: dx_um,
        wavelength_um: sys.wavelength_um,
    })
}

/// Relayed pupil radius at the diffuser, in um.
pub fn pupil_radius_um(sys: &OpticalSystem) -> f64 {
    sys.relayed_pupil_diameter_mm() * 500.0
}

fn apodize(sys: &OpticalSystem, mode: Apodization, rho: f64, rho_max: f64) -> f64 {
    if rho > rho_max {
        return 0.0;
    }
    match mode {
        Apodization::Uniform => 1.0,
        Apodization::SineCondition => {
            let s = rho / rho_max * sys.obj_na / sys.medium_index;
            (1.0 - s * s).powf(-0.25)
        }
    }
}

fn check_source_fov(sys: &OpticalSystem, src: [f64; 3]) -> Result<()> {
    let r = (src[0] * src[0] + src[1] * src[1]).sqrt();
    let half = sys.obj_fov_mm * 500.0;
    if r > half {
        return Err(Error::SourceOutOfRange {
            x: src[0],
            y: src[1],
            z: src[2],
            reason: format!("lateral distance {r:.3} um exceeds half the objective FOV ({half:.3} um)"),
        });
    }
    if src.iter().any(|v| !v.is_finite()) {
        return Err(Error::SourceOutOfRange {
            x: src[0],
            y: src[1],
            z: src[2],
            reason: "non-finite coordinate".into(),
        });
    }
    Ok(())
}

/// Reusable simulator for one system and one diffuser.
pub struct PsfSimulator {
    sys: OpticalSystem,
    params: SimParams,
    n: usize,
    dx_um: f64,
    rho_max_um: f64,
    band_limit: f64,
    /// Apodized diffuser transmission inside the pupil, zero elsewhere.
    screen: Array2<Complex64>,
    /// Unwrapped diffuser phase and owning lenslet at pupil samples.
    diffuser_phase: Array2<f64>,
    owner: Array2<u16>,
    transfer: Array2<Complex64>,
    fft: Fft2,
}

impl PsfSimulator {
    pub fn new(sys: &OpticalSystem, surface: &DiffuserSurface, params: &SimParams) -> Result<Self> {
        sys.validate()?;
        params.validate()?;
        let dx = params.sim_pitch_um(sys);
        if ((surface.grid_pitch_um - dx) / dx).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "surface grid pitch {} um differs from the simulation pitch {dx} um",
                surface.grid_pitch_um
            )));
        }
        let m = surface.size();
        let sensor_span = params.sensor_px * params.oversample;
        let want = ((params.guard * sensor_span as f64).ceil() as usize)
            .max(m + 2)
            .max(sensor_span + params.oversample + 2);
        let mut n = next_fast_len(want);
        while n % 2 == 1 {
            n = next_fast_len(n + 1);
        }
        let rp = pupil_radius_um(sys);
        if rp > (m / 2) as f64 * dx + 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "surface ({m} samples) does not cover the {rp:.1} um pupil radius"
            )));
        }

        let t = phase_screen(surface, sys.wavelength_um);
        let kphase = 2.0 * PI / sys.wavelength_um * (surface.refractive_index - 1.0);
        let off = n / 2 - m / 2;
        let mut screen = Array2::<Complex64>::zeros((n, n));
        let mut dphase = Array2::<f64>::zeros((n, n));
        let mut owner = Array2::<u16>::from_elem((n, n), u16::MAX);
        for i in 0..m {
            let y = grid_coord(i, m, dx);
            for j in 0..m {
                let x = grid_coord(j, m, dx);
                let a = apodize(sys, params.apodization, (x * x + y * y).sqrt(), rp);
                if a > 0.0 {
                    screen[[i + off, j + off]] = t[[i, j]] * a;
                    dphase[[i + off, j + off]] = kphase * surface.height_map[[i, j]];
                    owner[[i + off, j + off]] = surface.owner[[i, j]];
                }
            }
        }
        let d_um = sys.f_ave_mm * 1000.0;
        let sim = Self {
            sys: sys.clone(),
            params: params.clone(),
            n,
            dx_um: dx,
            rho_max_um: rp,
            band_limit: band_limit(n, dx, sys.wavelength_um, d_um),
            screen,
            diffuser_phase: dphase,
            owner,
            transfer: transfer_function(n, dx, sys.wavelength_um, d_um),
            fft: Fft2::new(n, n),
        };
        let f = sim.max_local_frequency([0.0, 0.0, 0.0]);
        if f > sim.band_limit {
            return Err(Error::Aliasing(format!(
                "diffuser local frequency {f:.4} cycles/um exceeds the band limit {:.4} \
                 (grid {n} x {dx} um, distance {} mm); use a finer oversample",
                sim.band_limit, sys.f_ave_mm
            )));
        }
        Ok(sim)
    }

    pub fn grid_size(&self) -> usize {
        self.n
    }

    pub fn sim_pitch_um(&self) -> f64 {
        self.dx_um
    }

    pub fn system(&self) -> &OpticalSystem {
        &self.sys
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    /// Largest local spatial frequency (cycles/um, per axis) of the pupil
    /// field for a source, from phase differences between neighbouring
    /// samples of the same lenslet.
    pub fn max_local_frequency(&self, src: [f64; 3]) -> f64 {
        let ph = SourcePhase::new(&self.sys, src, self.rho_max_um);
        let n = self.n;
        let dx = self.dx_um;
        let rows: Vec<f64> = par::map_range(n, |i| {
            let y = grid_coord(i, n, dx);
            let mut worst: f64 = 0.0;
            for j in 0..n {
                let o = self.owner[[i, j]];
                if o == u16::MAX {
                    continue;
                }
                let x = grid_coord(j, n, dx);
                let p = self.diffuser_phase[[i, j]] + ph.at(x, y);
                if j + 1 < n && self.owner[[i, j + 1]] == o {
                    let q = self.diffuser_phase[[i, j + 1]] + ph.at(x + dx, y);
                    worst = worst.max((q - p).abs());
                }
                if i + 1 < n && self.owner[[i + 1, j]] == o {
                    let q = self.diffuser_phase[[i + 1, j]] + ph.at(x, y + dx);
                    worst = worst.max((q - p).abs());
                }
            }
            worst
        });
        rows.into_iter().fold(0.0, f64::max) / (2.0 * PI * dx)
    }

    /// Reject sources outside the objective FOV, the configured depth range or
    /// the sampling limit of the grid.
    pub fn check_source(&self, src: [f64; 3]) -> Result<()> {
        check_source_fov(&self.sys, src)?;
        if src[2].abs() > self.params.max_depth_um {
            return Err(Error::SourceOutOfRange {
                x: src[0],
                y: src[1],
                z: src[2],
                reason: format!("|z| exceeds the configured {} um", self.params.max_depth_um),
            });
        }
        let f = self.max_local_frequency(src);
        if f > self.band_limit {
            return Err(Error::SourceOutOfRange {
                x: src[0],
                y: src[1],
                z: src[2],
                reason: format!(
                    "pupil field local frequency {f:.4} cycles/um exceeds the band limit {:.4}",
                    self.band_limit
                ),
            });
        }
        Ok(())
    }

    /// Complex field at the sensor plane on the full simulation grid.
    pub fn sensor_field(&self, src: [f64; 3]) -> Result<FieldGrid> {
        self.check_source(src)?;
        let ph = SourcePhase::new(&self.sys, src, self.rho_max_um);
        let n = self.n;
        let dx = self.dx_um;
        // Field in FFT order: sample (i, j) holds grid index (i + n/2, j + n/2).
        let mut u = Array2::<Complex64>::zeros((n, n));
        par::for_each_row(&mut u, |i, mut row| {
            let gi = (i + n / 2) % n;
            let y = grid_coord(gi, n, dx);
            for (j, v) in row.iter_mut().enumerate() {
                let gj = (j + n / 2) % n;
                let s = self.screen[[gi, gj]];
                if s.re != 0.0 || s.im != 0.0 {
                    let x = grid_coord(gj, n, dx);
                    *v = s * Complex64::from_polar(1.0, ph.at(x, y));
                }
            }
        });
        self.fft.forward(&mut u);
        u.zip_mut_with(&self.transfer, |a, b| *a *= *b);
        self.fft.inverse(&mut u);
        Ok(FieldGrid {
            amplitude: fftshift(&u),
            pitch_um: dx,
            wavelength_um: self.sys.wavelength_um,
        })
    }

    /// Sensor intensity, area-integrated over `oversample x oversample`
    /// blocks (units of field power).
    pub fn simulate_psf(&self, src: [f64; 3]) -> Result<Array2<f64>> {
        Ok(self.bin_to_sensor(&self.simulate_intensity(src)?, (0, 0)))
    }

    /// Sensor-plane intensity on the full simulation grid.
    pub fn simulate_intensity(&self, src: [f64; 3]) -> Result<Array2<f64>> {
        Ok(self.sensor_field(src)?.intensity())
    }

    /// Object-space lateral size of one simulation sample (um).
    pub fn fine_object_pitch_um(&self) -> f64 {
        self.dx_um / magnification(&self.sys)
    }

    /// Sum of the full-grid intensity (no sensor crop).
    pub fn pupil_power(&self, src: [f64; 3]) -> Result<f64> {
        self.check_source(src)?;
        Ok(self.screen.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.dx_um * self.dx_um)
    }

    /// Bin a full-grid intensity onto the sensor after translating it by
    /// `shift` simulation samples (rows, columns); samples moved in from
    /// outside the grid are zero.
    pub fn bin_to_sensor(&self, intensity: &Array2<f64>, shift: (isize, isize)) -> Array2<f64> {
        let s = self.params.sensor_px;
        let o = self.params.oversample;
        let n = self.n as isize;
        let c = self.n / 2;
        let start = (c - o * (s / 2) - o / 2) as isize;
        let area = self.dx_um * self.dx_um;
        let mut out = Array2::<f64>::zeros((s, s));
        for (iy, mut row) in out.rows_mut().into_iter().enumerate() {
            for (ix, v) in row.iter_mut().enumerate() {
                let y0 = start + (iy * o) as isize - shift.0;
                let x0 = start + (ix * o) as isize - shift.1;
                let (ya, yb) = (y0.clamp(0, n), (y0 + o as isize).clamp(0, n));
                let (xa, xb) = (x0.clamp(0, n), (x0 + o as isize).clamp(0, n));
                if ya < yb && xa < xb {
                    *v = intensity.slice(s![ya..yb, xa..xb]).sum() * area;
                }
            }
        }
        out
    }

    /// PSFs for every depth in `z_list_um` at a common lateral offset.
    pub fn simulate_stack(&self, z_list_um: &[f64], lateral_offset_um: [f64; 2]) -> Result<PsfStack> {
        if z_list_um.is_empty() {
            return Err(Error::InvalidArgument("empty depth list".into()));
        }
        if z_list_um.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("depths must be strictly increasing".into()));
        }
        let s = self.params.sensor_px;
        let mut k = Array3::<f64>::zeros((z_list_um.len(), s, s));
        for (i, &z) in z_list_um.iter().enumerate() {
            let psf = self.simulate_psf([lateral_offset_um[0], lateral_offset_um[1], z])?;
            k.index_axis_mut(ndarray::Axis(0), i).assign(&psf);
            log::debug!("psf z = {z} um done ({}/{})", i + 1, z_list_um.len());
        }
        PsfStack::new(k, z_list_um.to_vec(), self.sys.pixel_um)
    }

    /// Expected sensor-pixel displacement of the PSF for a lateral source
    /// offset (um).
    pub fn expected_shift_px(&self, offset_um: f64) -> f64 {
        magnification(&self.sys) * offset_um / self.sys.pixel_um
    }
}

/// Simulate the stack for a diffuser in one call.
pub fn simulate_psf_stack(
    sys: &OpticalSystem,
    surface: &DiffuserSurface,
    params: &SimParams,
    z_list_um: &[f64],
    lateral_offset_um: [f64; 2],
) -> Result<PsfStack> {
    PsfSimulator::new(sys, surface, params)?.simulate_stack(z_list_um, lateral_offset_um)
}

/// Evenly spaced depths from `-half` to `+half` inclusive.
pub fn depth_grid(half_range_um: f64, step_um: f64) -> Vec<f64> {
    let n = (2.0 * half_range_um / step_um).round() as i64;
    (0..=n).map(|i| -half_range_um + i as f64 * step_um).collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::design::LayoutKind;
    use crate::registration::{fourier_shift, register};
    use crate::surface;

    /// Half-size variant of the desk system: 0.45 mm pupil, 256 px sensor,
    /// +-40 um design range.
    pub(crate) fn small_system() -> (OpticalSystem, SimParams) {
        let mut sys = OpticalSystem::desk_scale();
        sys.relay_focal_mm = 4.5;
        sys.pitch_mm = 0.09;
        sys.f_ave_mm = 0.6;
        sys.obj_fov_mm = 0.12;
        sys.set_focal_range(40.0).unwrap();
        let params = SimParams {
            sensor_px: 256,
            max_depth_um: 50.0,
            ..SimParams::default()
        };
        (sys, params)
    }

    fn gaussian(n: usize, dx: f64, w: f64) -> FieldGrid {
        let a = Array2::from_shape_fn((n, n), |(i, j)| {
            let (x, y) = (grid_coord(j, n, dx), grid_coord(i, n, dx));
            Complex64::from_polar((-(x * x + y * y) / (w * w)).exp(), 0.01 * x)
        });
        FieldGrid {
            amplitude: a,
            pitch_um: dx,
            wavelength_um: 0.5,
        }
    }

    #[test]
    fn propagation_zero_distance_is_identity() {
        let f = gaussian(64, 1.0, 8.0);
        let g = angular_spectrum_propagate(&f, 0.0).unwrap();
        assert_eq!(f.amplitude, g.amplitude);
    }

    #[test]
    fn propagation_round_trip_and_energy() {
        let f = gaussian(128, 1.0, 10.0);
        let g = angular_spectrum_propagate(&f, 0.05).unwrap();
        assert!(((g.power() - f.power()) / f.power()).abs() < 1e-6);
        let b = angular_spectrum_propagate(&g, -0.05).unwrap();
        let rms = (b
            .amplitude
            .iter()
            .zip(f.amplitude.iter())
            .map(|(x, y)| (x - y).norm_sqr())
            .sum::<f64>()
            / f.amplitude.len() as f64)
            .sqrt();
        assert!(rms < 1e-10, "rms {rms}");
    }

    #[test]
    fn band_limit_violation_is_rejected() {
        // A high-frequency grating on a small window cannot travel far.
        let n = 64;
        let a = Array2::from_shape_fn((n, n), |(_, j)| Complex64::from_polar(1.0, 2.5 * j as f64));
        let f = FieldGrid {
            amplitude: a,
            pitch_um: 0.5,
            wavelength_um: 0.5,
        };
        assert!(matches!(angular_spectrum_propagate(&f, 1.0), Err(Error::Aliasing(_))));
    }

    #[test]
    fn on_axis_pupil_field_is_real_and_symmetric() {
        let (sys, _) = small_system();
        let f = pupil_field(&sys, Apodization::SineCondition, [0.0; 3], 65, 8.0).unwrap();
        let n = 65;
        for i in 0..n {
            for j in 0..n {
                let v = f.amplitude[[i, j]];
                assert_eq!(v.im, 0.0);
                assert!((v - f.amplitude[[j, i]]).norm() < 1e-12);
                assert!((v - f.amplitude[[n - 1 - i, j]]).norm() < 1e-12);
            }
        }
        assert!(f.amplitude[[32, 32]].re == 1.0);
        assert_eq!(f.amplitude[[0, 0]].re, 0.0);
    }

    #[test]
    fn lateral_shift_adds_linear_phase_only() {
        let (sys, _) = small_system();
        let a = pupil_field(&sys, Apodization::Uniform, [0.0; 3], 65, 8.0).unwrap();
        let b = pupil_field(&sys, Apodization::Uniform, [5.0, 0.0, 0.0], 65, 8.0).unwrap();
        let alpha = sys.pupil_tilt(5.0);
        let k = 2.0 * PI / sys.wavelength_um;
        for ((i, j), v) in b.amplitude.indexed_iter() {
            let u = a.amplitude[[i, j]];
            assert!((v.norm() - u.norm()).abs() < 1e-12);
            if u.norm() > 0.0 {
                let x = grid_coord(j, 65, 8.0);
                let want = Complex64::from_polar(1.0, k * alpha * x) * u;
                assert!((v - want).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn defocus_curvature_matches_thin_lens_conjugate() {
        // Newtonian imaging through the 4f + relay: the relayed point sits at
        // -f_RL^2 / dz' with dz' = (f_TL / f_obj)^2 dz.
        let (sys, _) = small_system();
        let dz_um = 40.0;
        let dzp = (sys.tube_focal_mm / sys.obj_focal_mm).powi(2) * dz_um / 1000.0;
        let z_defocus = -sys.relay_focal_mm.powi(2) / dzp;
        let n = 129;
        let dx = 1.0;
        let f = pupil_field(&sys, Apodization::Uniform, [0.0, 0.0, dz_um], n, dx).unwrap();
        // least-squares fit of the phase to c * rho^2 over the paraxial core
        let (mut num, mut den) = (0.0, 0.0);
        for ((i, j), v) in f.amplitude.indexed_iter() {
            let (x, y) = (grid_coord(j, n, dx), grid_coord(i, n, dx));
            let r2 = x * x + y * y;
            if v.norm() > 0.0 && r2 < 20.0f64.powi(2) {
                num += v.arg() * r2;
                den += r2 * r2;
            }
        }
        let c = num / den;
        // exp(i k rho^2 / (2 R)) for a wave diverging from distance R
        let r_fit_mm = PI / (sys.wavelength_um * c) / 1000.0;
        assert!(((r_fit_mm + z_defocus) / z_defocus).abs() < 1e-3, "{r_fit_mm} vs {z_defocus}");
    }

    fn registered_residual(a: &Array2<f64>, b: &Array2<f64>, want: (f64, f64)) -> f64 {
        let r = register(a.view(), b.view(), 200).unwrap();
        assert!((r.shift.0 - want.0).abs() <= 0.01 * want.0.abs().max(1.0), "{:?} vs {want:?}", r.shift);
        assert!((r.shift.1 - want.1).abs() <= 0.01 * want.1.abs().max(1.0), "{:?} vs {want:?}", r.shift);
        let back = fourier_shift(b.view(), -r.shift.0, -r.shift.1);
        let (mut err, mut tot) = (0.0, 0.0);
        for (p, q) in back.iter().zip(a.iter()) {
            err += (p - q).powi(2);
            tot += q * q;
        }
        (err / tot).sqrt()
    }

    #[test]
    fn psf_shift_equivariance_and_energy() {
        let (sys, params) = small_system();
        let px = sys.pixel_um / magnification(&sys);
        for (layout, k) in [(LayoutKind::Mla, (0.0, 6.0)), (LayoutKind::Rum, (-1.0, 1.0))] {
            let surf = surface::generate(&sys, layout, 1.56, params.sim_pitch_um(&sys), 40.0, 4).unwrap();
            let sim = PsfSimulator::new(&sys, &surf, &params).unwrap();
            let a = sim.simulate_psf([0.0, 0.0, 0.0]).unwrap();
            let b = sim.simulate_psf([k.1 * px, k.0 * px, 0.0]).unwrap();
            assert!((sim.expected_shift_px(k.1 * px) - k.1).abs() < 1e-9);
            let rms = registered_residual(&a, &b, k);
            assert!(rms < 0.01, "{layout}: relative rms {rms}");

            let pupil = sim.pupil_power([0.0; 3]).unwrap();
            let sensor = sim.sensor_field([0.0; 3]).unwrap().power();
            assert!(sensor <= pupil * (1.0 + 1e-9));
            assert!(a.sum() <= sensor * (1.0 + 1e-9));
            assert!(a.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn sources_outside_fov_or_depth_are_rejected() {
        let (sys, params) = small_system();
        let surf = surface::generate(&sys, LayoutKind::Mla, 1.56, params.sim_pitch_um(&sys), 40.0, 0)
            .unwrap();
        let sim = PsfSimulator::new(&sys, &surf, &params).unwrap();
        assert!(matches!(
            sim.simulate_psf([100.0, 0.0, 0.0]),
            Err(Error::SourceOutOfRange { .. })
        ));
        assert!(matches!(
            sim.simulate_psf([0.0, 0.0, 500.0]),
            Err(Error::SourceOutOfRange { .. })
        ));
    }

    #[test]
    fn depth_grid_is_symmetric() {
        let g = depth_grid(100.0, 10.0);
        assert_eq!(g.len(), 21);
        assert_eq!(g[0], -100.0);
        assert_eq!(g[10], 0.0);
        assert_eq!(g[20], 100.0);
    }
}
