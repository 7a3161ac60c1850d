//! Depth-range study: a spiral of spheres through the whole depth range,
//! reconstructed by ADMM-TV and scored by the number of resolved spheres.

use serde::{Deserialize, Serialize};

use super::metrics::{dip_between, local_maxima};
use super::phantom::{spiral_centers, voxelize_spheres, SpiralParams};
use crate::design::{dof_microlens, LayoutKind};
use crate::error::{Error, Result};
use crate::forward::{add_gaussian_noise, forward_project, Measurement, Volume};
use crate::recon::{admm_tv, SolverConfig};
use crate::wavesim::{depth_grid, PsfSimulator, PsfStack};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DepthParams {
    pub spiral: SpiralParams,
    pub z_half_range_um: f64,
    pub z_step_um: f64,
    /// Lateral reconstruction grid edge in object pixels.
    pub lateral_px: usize,
    pub noise_level: f64,
    pub solver: SolverConfig,
    pub counting: CountParams,
}

impl Default for DepthParams {
    fn default() -> Self {
        Self {
            spiral: SpiralParams::default(),
            z_half_range_um: 100.0,
            z_step_um: 5.0,
            lateral_px: 96,
            noise_level: 0.05,
            solver: SolverConfig {
                max_iters: 60,
                ..SolverConfig::default()
            },
            counting: CountParams::default(),
        }
    }
}

impl DepthParams {
    pub fn validate(&self) -> Result<()> {
        self.spiral.validate()?;
        if !(self.z_half_range_um > 0.0 && self.z_step_um > 0.0) {
            return Err(Error::Config("depth grid must have positive range and step".into()));
        }
        if self.lateral_px < 8 {
            return Err(Error::Config("lateral_px must be at least 8".into()));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(Error::Config("noise_level must be nonnegative".into()));
        }
        self.counting.validate()?;
        self.solver.validate()
    }

    pub fn z_planes(&self) -> Vec<f64> {
        depth_grid(self.z_half_range_um, self.z_step_um)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CountParams {
    pub dip_fraction: f64,
    /// Maxima below this fraction of the global maximum are ignored.
    pub threshold_fraction: f64,
    /// Maxima closer than this (um) count as neighbours.
    pub neighbour_radius_um: f64,
}

impl Default for CountParams {
    fn default() -> Self {
        Self {
            dip_fraction: 0.2,
            threshold_fraction: 0.1,
            neighbour_radius_um: 10.0,
        }
    }
}

impl CountParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dip_fraction > 0.0 && self.dip_fraction < 1.0) {
            return Err(Error::Config("dip_fraction must lie in (0, 1)".into()));
        }
        if !(self.threshold_fraction >= 0.0 && self.threshold_fraction < 1.0) {
            return Err(Error::Config("threshold_fraction must lie in [0, 1)".into()));
        }
        if !(self.neighbour_radius_um > 0.0) {
            return Err(Error::Config("neighbour_radius_um must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereCount {
    pub resolved: usize,
    /// Per sphere, in phantom order.
    pub sphere_resolved: Vec<bool>,
    pub sphere_z_um: Vec<f64>,
    pub detected_maxima: usize,
}

impl SphereCount {
    pub fn resolved_z_um(&self) -> Vec<f64> {
        self.sphere_z_um
            .iter()
            .zip(&self.sphere_resolved)
            .filter(|(_, &r)| r)
            .map(|(z, _)| *z)
            .collect()
    }
}

fn position_um(recon: &Volume, v: [usize; 3]) -> [f64; 3] {
    let (_, ny, nx) = recon.shape();
    [
        (v[2] as f64 - (nx / 2) as f64) * recon.lateral_pitch_um,
        (v[1] as f64 - (ny / 2) as f64) * recon.lateral_pitch_um,
        recon.z_positions_um[v[0]],
    ]
}

/// Count spheres (centers in um, `[x, y, z]`) recovered in `recon`.
///
/// Maxima are matched one-to-one to the nearest sphere center, accepting
/// matches within one radius axially and one radius plus half a voxel
/// diagonal laterally. A matched sphere is resolved when the profile to
/// every other detected maximum within the neighbour radius dips by at least
/// the dip fraction.
pub fn count_resolved_spheres(
    recon: &Volume,
    centers: &[[f64; 3]],
    radius_um: f64,
    params: &CountParams,
) -> Result<SphereCount> {
    params.validate()?;
    let peak = recon.intensities.iter().cloned().fold(0.0, f64::max);
    let sphere_z_um = centers.iter().map(|c| c[2]).collect();
    if !(peak > 0.0) {
        return Ok(SphereCount {
            resolved: 0,
            sphere_resolved: vec![false; centers.len()],
            sphere_z_um,
            detected_maxima: 0,
        });
    }
    let maxima = local_maxima(recon.intensities.view(), params.threshold_fraction * peak);
    let pos: Vec<[f64; 3]> = maxima.iter().map(|(v, _)| position_um(recon, *v)).collect();
    let lat_tol = radius_um + recon.lateral_pitch_um * std::f64::consts::FRAC_1_SQRT_2;

    let mut pairs = Vec::new();
    for (s, c) in centers.iter().enumerate() {
        for (m, p) in pos.iter().enumerate() {
            let lat = (p[0] - c[0]).hypot(p[1] - c[1]);
            let ax = (p[2] - c[2]).abs();
            if lat <= lat_tol && ax <= radius_um + 1e-9 {
                pairs.push((lat.hypot(ax), s, m));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut sphere_max = vec![None; centers.len()];
    let mut used = vec![false; maxima.len()];
    for (_, s, m) in pairs {
        if sphere_max[s].is_none() && !used[m] {
            sphere_max[s] = Some(m);
            used[m] = true;
        }
    }

    let v = recon.intensities.view();
    let mut sphere_resolved = vec![false; centers.len()];
    for (s, m) in sphere_max.iter().enumerate() {
        let Some(m) = *m else { continue };
        let a = maxima[m].0;
        let fa = [a[0] as f64, a[1] as f64, a[2] as f64];
        let ok = maxima.iter().enumerate().all(|(o, (b, _))| {
            if o == m {
                return true;
            }
            let d = (0..3).map(|k| (pos[o][k] - pos[m][k]).powi(2)).sum::<f64>().sqrt();
            if d > params.neighbour_radius_um {
                return true;
            }
            dip_between(v, fa, [b[0] as f64, b[1] as f64, b[2] as f64]) >= params.dip_fraction
        });
        sphere_resolved[s] = ok;
    }
    Ok(SphereCount {
        resolved: sphere_resolved.iter().filter(|&&r| r).count(),
        sphere_resolved,
        sphere_z_um,
        detected_maxima: maxima.len(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DepthResult {
    pub layout_kind: LayoutKind,
    pub count: SphereCount,
    pub resolved_z_min_um: Option<f64>,
    pub resolved_z_max_um: Option<f64>,
    pub dof_um: f64,
    pub solver_iterations: usize,
    pub objective: f64,
    #[serde(skip)]
    pub phantom: Option<Volume>,
    #[serde(skip)]
    pub measurement: Option<Measurement>,
    #[serde(skip)]
    pub reconstruction: Option<Volume>,
}

/// PSF stack on the study's depth grid.
pub fn depth_psfs(sim: &PsfSimulator, params: &DepthParams) -> Result<PsfStack> {
    sim.simulate_stack(&params.z_planes(), [0.0, 0.0])
}

/// Forward-project the spiral through `psfs`, add noise and reconstruct.
pub fn depth_study(
    psfs: &PsfStack,
    sys: &crate::design::OpticalSystem,
    layout: LayoutKind,
    params: &DepthParams,
    seed: u64,
) -> Result<DepthResult> {
    params.validate()?;
    let z = params.z_planes();
    if psfs.z_positions_um.len() != z.len()
        || psfs.z_positions_um.iter().zip(&z).any(|(a, b)| (a - b).abs() > 1e-9)
    {
        return Err(Error::Shape("PSF stack depths do not match the study depth grid".into()));
    }
    let pitch = sys.object_pixel_um();
    let n = params.lateral_px;
    let centers = spiral_centers(&params.spiral)?;
    let phantom = voxelize_spheres(&centers, params.spiral.radius_um(), (n, n), pitch, &z, 8)?;
    let clean = forward_project(&phantom, psfs)?;
    let meas = add_gaussian_noise(&clean, params.noise_level, seed)?;
    let (recon, res) = admm_tv(&meas, psfs, (n, n), pitch, &params.solver)?;
    let count = count_resolved_spheres(&recon, &centers, params.spiral.radius_um(), &params.counting)?;
    let rz = count.resolved_z_um();
    Ok(DepthResult {
        layout_kind: layout,
        resolved_z_min_um: rz.iter().cloned().reduce(f64::min),
        resolved_z_max_um: rz.iter().cloned().reduce(f64::max),
        count,
        dof_um: dof_microlens(sys),
        solver_iterations: res.iterations,
        objective: res.objective,
        phantom: Some(phantom),
        measurement: Some(meas),
        reconstruction: Some(recon),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn grid() -> (Vec<[f64; 3]>, Volume) {
        let p = SpiralParams {
            n_spheres: 6,
            z_first_um: 10.0,
            ..SpiralParams::default()
        };
        let c = spiral_centers(&p).unwrap();
        let z = depth_grid(20.0, 5.0);
        let v = voxelize_spheres(&c, 1.0, (32, 32), 0.75, &z, 4).unwrap();
        (c, v)
    }

    #[test]
    fn phantom_resolves_itself() {
        let (c, v) = grid();
        let n = count_resolved_spheres(&v, &c, 1.0, &CountParams::default()).unwrap();
        assert_eq!(n.resolved, c.len(), "{n:?}");
    }

    #[test]
    fn zeros_resolve_nothing() {
        let (c, v) = grid();
        let z = Volume::new(Array3::zeros(v.shape()), v.lateral_pitch_um, v.z_positions_um.clone()).unwrap();
        assert_eq!(count_resolved_spheres(&z, &c, 1.0, &CountParams::default()).unwrap().resolved, 0);
    }

    #[test]
    fn merged_blob_counts_once_at_most() {
        let (c, v) = grid();
        // smear every plane into its neighbours so adjacent spheres merge
        let s = v.intensities.clone();
        let mut blur = s.clone();
        let (nz, ny, nx) = s.dim();
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let mut acc = 0.0;
                    let mut k = 0.0;
                    for dz in -1i64..=1 {
                        for dy in -3i64..=3 {
                            for dx in -3i64..=3 {
                                let (a, b, d) = (z as i64 + dz, y as i64 + dy, x as i64 + dx);
                                if a >= 0 && b >= 0 && d >= 0 && (a as usize) < nz && (b as usize) < ny && (d as usize) < nx {
                                    acc += s[[a as usize, b as usize, d as usize]];
                                    k += 1.0;
                                }
                            }
                        }
                    }
                    blur[[z, y, x]] = acc / k;
                }
            }
        }
        let b = Volume::new(blur, v.lateral_pitch_um, v.z_positions_um.clone()).unwrap();
        let n = count_resolved_spheres(&b, &c, 1.0, &CountParams::default()).unwrap();
        assert!(n.resolved < c.len(), "{n:?}");
    }
}
