//! Field-of-view study: block-wise shift-varying measurement of a chart,
//! reconstruction with the on-axis PSF, ghost detection and PSF similarity
//! across the field.

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use super::metrics::{cosine_similarity_profile, psnr, SimilarityProfile};
use super::phantom::{fov_phantom, ChartPattern};
use crate::design::{fov, LayoutKind};
use crate::error::{Error, Result};
use crate::forward::{add_gaussian_noise, forward_project_blockwise, Measurement, PsfField};
use crate::recon::{richardson_lucy, RlNormalization};
use crate::wavesim::{PsfSimulator, PsfStack};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FovParams {
    /// Edge of the square chart; `None` uses the objective FOV.
    pub extent_um: Option<f64>,
    pub block_um: f64,
    pub z_um: f64,
    pub pattern: ChartPattern,
    pub noise_level: f64,
    /// Dilation (object pixels) of the chart mask excluded from ghost regions.
    pub ghost_guard_px: usize,
    /// Unregularized Richardson-Lucy iterations with the on-axis PSF.
    pub rl_iters: usize,
}

impl Default for FovParams {
    fn default() -> Self {
        Self {
            extent_um: None,
            block_um: 20.0,
            z_um: 0.0,
            pattern: ChartPattern::Chart,
            noise_level: 0.05,
            ghost_guard_px: 6,
            rl_iters: 8,
        }
    }
}

impl FovParams {
    pub fn validate(&self) -> Result<()> {
        if let Some(e) = self.extent_um {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::Config("fov extent_um must be positive".into()));
            }
        }
        if !(self.block_um > 0.0 && self.block_um.is_finite()) {
            return Err(Error::Config("fov block_um must be positive".into()));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(Error::Config("fov noise_level must be nonnegative".into()));
        }
        if self.rl_iters == 0 {
            return Err(Error::Config("fov rl_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-block PSFs re-centred onto their block, plus the block centers (um).
pub struct FieldPsfs {
    pub field: PsfField,
    pub centers_um: Vec<[f64; 2]>,
    /// Blocks whose content was empty and whose kernel was left at zero.
    pub skipped: Vec<bool>,
}

/// Simulate one PSF per block of `plane` (object pixels of `pitch_um`, center
/// pixel `n / 2`). Each kernel is the off-axis PSF translated back by the
/// block-center displacement, so block content convolved with it lands where
/// the off-axis source images. Blocks without content are not simulated.
pub fn simulate_field(
    sim: &PsfSimulator,
    plane: &Array2<f64>,
    pitch_um: f64,
    block_um: f64,
    z_um: f64,
) -> Result<FieldPsfs> {
    let (r, c) = plane.dim();
    let b = (((block_um / pitch_um).round() as usize).max(1)) | 1;
    let blocks = (r.div_ceil(b), c.div_ceil(b));
    let s = sim.params().sensor_px;
    let fine = sim.fine_object_pitch_um();
    let half_fov = sim.system().obj_fov_mm * 500.0;
    let mut kernels = Array3::<f64>::zeros((blocks.0 * blocks.1, s, s));
    let mut centers = Vec::with_capacity(blocks.0 * blocks.1);
    let mut skipped = Vec::with_capacity(blocks.0 * blocks.1);
    for by in 0..blocks.0 {
        for bx in 0..blocks.1 {
            let (y0, x0) = (by * b, bx * b);
            let (y1, x1) = ((y0 + b).min(r), (x0 + b).min(c));
            let cy = (y0 + b / 2) as f64 - (r / 2) as f64;
            let cx = (x0 + b / 2) as f64 - (c / 2) as f64;
            let mut at = [cx * pitch_um, cy * pitch_um];
            // corner blocks of a square chart reach past the circular FOV
            let rad = at[0].hypot(at[1]);
            if rad > half_fov {
                let k = half_fov / rad * (1.0 - 1e-9);
                at = [at[0] * k, at[1] * k];
            }
            centers.push(at);
            let empty = plane.slice(ndarray::s![y0..y1, x0..x1]).iter().all(|&v| v == 0.0);
            skipped.push(empty);
            if empty {
                continue;
            }
            let intensity = sim.simulate_intensity([at[0], at[1], z_um])?;
            let shift = (-(at[1] / fine).round() as isize, -(at[0] / fine).round() as isize);
            kernels
                .index_axis_mut(Axis(0), by * blocks.1 + bx)
                .assign(&sim.bin_to_sensor(&intensity, shift));
            log::debug!("block ({by}, {bx}) at ({:.1}, {:.1}) um done", at[0], at[1]);
        }
    }
    Ok(FieldPsfs {
        field: PsfField {
            block_px: b,
            blocks,
            kernels,
            sensor_pitch_um: sim.system().pixel_um,
        },
        centers_um: centers,
        skipped,
    })
}

fn dilate(mask: &Array2<bool>, radius: usize) -> Array2<bool> {
    let (r, c) = mask.dim();
    let rad = radius as isize;
    let mut out = Array2::from_elem((r, c), false);
    for ((i, j), &m) in mask.indexed_iter() {
        if !m {
            continue;
        }
        for di in -rad..=rad {
            for dj in -rad..=rad {
                if di * di + dj * dj > rad * rad {
                    continue;
                }
                let (y, x) = (i as isize + di, j as isize + dj);
                if y >= 0 && x >= 0 && (y as usize) < r && (x as usize) < c {
                    out[[y as usize, x as usize]] = true;
                }
            }
        }
    }
    out
}

/// Ghost energy relative to signal energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GhostReport {
    /// Excess intensity in the ghost region over the mean background level,
    /// divided by the intensity inside the chart.
    pub ratio: f64,
    pub ghost_pixels: usize,
    pub background_level: f64,
}

/// Spurious intensity at the eight lattice offsets `(+-pitch, 0)`,
/// `(0, +-pitch)` and `(+-pitch, +-pitch)` of the chart, restricted to
/// pixels away from the (dilated) chart. The mean level of the remaining
/// background is subtracted so uniform noise does not count as ghosting.
pub fn ghost_ratio(recon: &Array2<f64>, chart: &Array2<f64>, pitch_px: usize, guard_px: usize) -> Result<GhostReport> {
    if recon.dim() != chart.dim() {
        return Err(Error::Shape("ghost_ratio needs equal shapes".into()));
    }
    let (r, c) = chart.dim();
    let mask = chart.mapv(|v| v > 0.0);
    let near = dilate(&mask, guard_px);
    let p = pitch_px as isize;
    let mut ghost = Array2::from_elem((r, c), false);
    for (dy, dx) in [(0, p), (0, -p), (p, 0), (-p, 0), (p, p), (p, -p), (-p, p), (-p, -p)] {
        for ((i, j), &m) in mask.indexed_iter() {
            if !m {
                continue;
            }
            let (y, x) = (i as isize + dy, j as isize + dx);
            if y >= 0 && x >= 0 && (y as usize) < r && (x as usize) < c && !near[[y as usize, x as usize]] {
                ghost[[y as usize, x as usize]] = true;
            }
        }
    }
    let ghost = dilate(&ghost, 1) & near.mapv(|v| !v);
    let (mut g_sum, mut g_n, mut b_sum, mut b_n, mut s_sum) = (0.0, 0usize, 0.0, 0usize, 0.0);
    for (((&v, &m), &n), &g) in recon.iter().zip(mask.iter()).zip(near.iter()).zip(ghost.iter()) {
        if m {
            s_sum += v;
        } else if g {
            g_sum += v;
            g_n += 1;
        } else if !n {
            b_sum += v;
            b_n += 1;
        }
    }
    let background = if b_n > 0 { b_sum / b_n as f64 } else { 0.0 };
    let excess = (g_sum - background * g_n as f64).max(0.0);
    Ok(GhostReport {
        ratio: if s_sum > 0.0 { excess / s_sum } else { 0.0 },
        ghost_pixels: g_n,
        background_level: background,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FovResult {
    pub layout_kind: LayoutKind,
    pub z_um: f64,
    pub pitch_um: f64,
    pub block_px: usize,
    pub lattice_pitch_um: f64,
    pub psnr_db: f64,
    pub ghost: GhostReport,
    /// Against radial distance of each simulated block center.
    pub similarity: SimilarityProfile,
    pub min_similarity: f64,
    #[serde(skip)]
    pub chart: Array2<f64>,
    #[serde(skip)]
    pub measurement: Option<Measurement>,
    #[serde(skip)]
    pub reconstruction: Array2<f64>,
}

/// Run the FOV study for one diffuser.
pub fn fov_study(sim: &PsfSimulator, layout: LayoutKind, params: &FovParams, seed: u64) -> Result<FovResult> {
    params.validate()?;
    let sys = sim.system();
    let pitch = sys.object_pixel_um();
    let extent = params.extent_um.unwrap_or(sys.obj_fov_mm * 1000.0);
    let chart = fov_phantom(extent, pitch, params.pattern)?;
    let fp = simulate_field(sim, &chart, pitch, params.block_um, params.z_um)?;
    let clean = forward_project_blockwise(chart.view(), &fp.field)?;
    let meas = add_gaussian_noise(&clean, params.noise_level, seed)?;

    let on_axis = sim.simulate_psf([0.0, 0.0, params.z_um])?;
    let stack = PsfStack::new(on_axis.clone().insert_axis(Axis(0)), vec![params.z_um], sys.pixel_um)?;
    let (vol, _) = richardson_lucy(&meas, &stack, chart.dim(), pitch, params.rl_iters, RlNormalization::Sensitivity)?;
    let recon = vol.intensities.index_axis(Axis(0), 0).to_owned();

    // every chart pixel is 1, so the signal peak is known
    let psnr_db = psnr(recon.view().insert_axis(Axis(0)), chart.view().insert_axis(Axis(0)))?;
    let lattice = fov(sys, LayoutKind::Mla);
    let ghost = ghost_ratio(&recon, &chart, (lattice / pitch).round() as usize, params.ghost_guard_px)?;

    let mut kernels = Vec::new();
    let mut radii = Vec::new();
    for (i, c) in fp.centers_um.iter().enumerate() {
        if !fp.skipped[i] {
            kernels.push(fp.field.kernels.index_axis(Axis(0), i).to_owned());
            radii.push(c[0].hypot(c[1]));
        }
    }
    let similarity = cosine_similarity_profile(on_axis.view(), &kernels, &radii)?;
    let min_similarity = similarity.cosine_similarity.iter().cloned().fold(1.0, f64::min);
    Ok(FovResult {
        layout_kind: layout,
        z_um: params.z_um,
        pitch_um: pitch,
        block_px: fp.field.block_px,
        lattice_pitch_um: lattice,
        psnr_db,
        ghost,
        similarity,
        min_similarity,
        chart,
        measurement: Some(meas),
        reconstruction: recon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ghost_ratio_sees_shifted_copies_only() {
        let mut chart = Array2::<f64>::zeros((60, 60));
        for i in 10..14 {
            for j in 10..14 {
                chart[[i, j]] = 1.0;
            }
        }
        let clean = ghost_ratio(&chart, &chart, 25, 2).unwrap();
        assert_eq!(clean.ratio, 0.0);
        let mut recon = chart.clone();
        for i in 10..14 {
            for j in 35..39 {
                recon[[i, j]] = 0.5;
            }
        }
        let g = ghost_ratio(&recon, &chart, 25, 2).unwrap();
        assert!((g.ratio - 0.5).abs() < 1e-12, "{g:?}");
        // a uniform floor is background, not ghosting
        let floor = &recon + 0.1;
        let f = ghost_ratio(&floor, &chart, 25, 2).unwrap();
        assert!((f.ratio - g.ratio * 16.0 / 17.6).abs() < 1e-9, "{f:?}");
    }

    #[test]
    fn dilation_radius() {
        let mut m = Array2::from_elem((7, 7), false);
        m[[3, 3]] = true;
        let d = dilate(&m, 2);
        assert_eq!(d.iter().filter(|&&v| v).count(), 13);
    }
}
