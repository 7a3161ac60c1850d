//! Test objects: the spiral of spheres for the depth-range study and a
//! resolution chart for the field-of-view study.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::Volume;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpiralParams {
    pub n_spheres: usize,
    pub sphere_diameter_um: f64,
    /// Depth of the first sphere; later spheres step toward `-z_first_um`.
    pub z_first_um: f64,
    pub z_step_um: f64,
    /// Center-to-center lateral spacing grows linearly between these.
    pub spacing_start_um: f64,
    pub spacing_end_um: f64,
    /// Upper bound on the lateral extent including sphere diameters.
    pub max_extent_um: f64,
}

impl Default for SpiralParams {
    fn default() -> Self {
        Self {
            n_spheres: 39,
            sphere_diameter_um: 2.0,
            z_first_um: 95.0,
            z_step_um: 5.0,
            spacing_start_um: 3.0,
            spacing_end_um: 7.0,
            max_extent_um: 66.0,
        }
    }
}

impl SpiralParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_spheres == 0 {
            return Err(Error::Config("spiral needs at least one sphere".into()));
        }
        for (k, v) in [
            ("sphere_diameter_um", self.sphere_diameter_um),
            ("z_step_um", self.z_step_um),
            ("spacing_start_um", self.spacing_start_um),
            ("spacing_end_um", self.spacing_end_um),
            ("max_extent_um", self.max_extent_um),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("spiral {k} must be positive")));
            }
        }
        Ok(())
    }

    pub fn radius_um(&self) -> f64 {
        self.sphere_diameter_um / 2.0
    }

    /// Axial gap between consecutive sphere surfaces.
    pub fn axial_gap_um(&self) -> f64 {
        self.z_step_um - self.sphere_diameter_um
    }
}

/// Sphere centers `[x, y, z]` (um) along an Archimedean spiral `r = b theta`
/// starting at the origin.
pub fn spiral_centers(p: &SpiralParams) -> Result<Vec<[f64; 3]>> {
    p.validate()?;
    let n = p.n_spheres;
    let spacing = |k: usize| {
        if n <= 2 {
            p.spacing_start_um
        } else {
            p.spacing_start_um + (p.spacing_end_um - p.spacing_start_um) * k as f64 / (n - 2) as f64
        }
    };
    let z = |k: usize| p.z_first_um - k as f64 * p.z_step_um;
    let place = |b: f64| -> Vec<[f64; 2]> {
        let pos = |t: f64| [b * t * t.cos(), b * t * t.sin()];
        let mut out = vec![[0.0, 0.0]];
        let mut t = 0.0;
        for k in 0..n.saturating_sub(1) {
            let s = spacing(k);
            let from = pos(t);
            let dist = |u: f64| {
                let q = pos(u);
                ((q[0] - from[0]).powi(2) + (q[1] - from[1]).powi(2)).sqrt()
            };
            // chord length grows monotonically for the step sizes used here
            let (mut lo, mut hi) = (t, t + 1.0);
            while dist(hi) < s {
                hi += 1.0;
            }
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if dist(mid) < s {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            t = 0.5 * (lo + hi);
            out.push(pos(t));
        }
        out
    };
    let extent = |c: &[[f64; 2]]| {
        let r = c.iter().map(|q| q[0].hypot(q[1])).fold(0.0, f64::max);
        2.0 * r + p.sphere_diameter_um
    };
    // pick the loosest winding that keeps neighbouring turns apart while
    // fitting the extent bound
    let mut b = p.spacing_end_um * 1.5 / (2.0 * std::f64::consts::PI);
    let mut pts = place(b);
    while extent(&pts) > p.max_extent_um && b > 1e-3 {
        b *= 0.97;
        pts = place(b);
    }
    if extent(&pts) > p.max_extent_um {
        return Err(Error::Config("spiral does not fit within max_extent_um".into()));
    }
    Ok(pts.iter().enumerate().map(|(k, q)| [q[0], q[1], z(k)]).collect())
}

/// Voxelize spheres onto a grid of lateral shape `lateral` (pitch
/// `pitch_um`, center voxel `n / 2` at x = y = 0) and depth planes
/// `z_positions_um`. Each voxel holds the fraction of its volume inside a
/// sphere, estimated from `sub^3` sample points by a center-inside test.
pub fn voxelize_spheres(
    centers: &[[f64; 3]],
    radius_um: f64,
    lateral: (usize, usize),
    pitch_um: f64,
    z_positions_um: &[f64],
    sub: usize,
) -> Result<Volume> {
    if z_positions_um.is_empty() {
        return Err(Error::InvalidArgument("no depth planes".into()));
    }
    let dz = if z_positions_um.len() > 1 {
        z_positions_um[1] - z_positions_um[0]
    } else {
        2.0 * radius_um
    };
    let mut v = Array3::<f64>::zeros((z_positions_um.len(), lateral.0, lateral.1));
    let s = sub.max(1);
    let inv = 1.0 / (s * s * s) as f64;
    for c in centers {
        for (iz, &zp) in z_positions_um.iter().enumerate() {
            if (zp - c[2]).abs() > radius_um + dz {
                continue;
            }
            let cy = c[1] / pitch_um + (lateral.0 / 2) as f64;
            let cx = c[0] / pitch_um + (lateral.1 / 2) as f64;
            let rv = radius_um / pitch_um + 1.0;
            let (y0, y1) = ((cy - rv).floor().max(0.0) as usize, ((cy + rv).ceil() as usize).min(lateral.0));
            let (x0, x1) = ((cx - rv).floor().max(0.0) as usize, ((cx + rv).ceil() as usize).min(lateral.1));
            for iy in y0..y1 {
                for ix in x0..x1 {
                    let mut hits = 0usize;
                    for a in 0..s {
                        let z = zp + ((a as f64 + 0.5) / s as f64 - 0.5) * dz;
                        for b in 0..s {
                            let y = (iy as f64 - (lateral.0 / 2) as f64 + (b as f64 + 0.5) / s as f64 - 0.5) * pitch_um;
                            for d in 0..s {
                                let x = (ix as f64 - (lateral.1 / 2) as f64 + (d as f64 + 0.5) / s as f64 - 0.5)
                                    * pitch_um;
                                if (x - c[0]).powi(2) + (y - c[1]).powi(2) + (z - c[2]).powi(2) <= radius_um * radius_um {
                                    hits += 1;
                                }
                            }
                        }
                    }
                    v[[iz, iy, ix]] += hits as f64 * inv;
                }
            }
        }
    }
    v.mapv_inplace(|x| x.min(1.0));
    Volume::new(v, pitch_um, z_positions_um.to_vec())
}

/// Spiral of spheres voxelized on the given grid.
pub fn spiral_phantom(p: &SpiralParams, lateral: (usize, usize), pitch_um: f64, z_positions_um: &[f64]) -> Result<Volume> {
    let centers = spiral_centers(p)?;
    voxelize_spheres(&centers, p.radius_um(), lateral, pitch_um, z_positions_um, 8)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ChartPattern {
    /// Ring, bar groups and point features; symmetric under 180 degrees.
    #[default]
    Chart,
    Uniform,
}

/// Test object on a square grid spanning `extent_um` at `pitch_um`; chart
/// content is limited to the inscribed disc. The grid size `n` is odd and pixel
/// `(i, j)` sits at `((j - n/2) pitch, (i - n/2) pitch)`.
pub fn fov_phantom(extent_um: f64, pitch_um: f64, pattern: ChartPattern) -> Result<Array2<f64>> {
    if !(extent_um > 0.0 && pitch_um > 0.0) {
        return Err(Error::InvalidArgument("chart extent and pitch must be positive".into()));
    }
    let n = (extent_um / pitch_um).round().max(1.0) as usize | 1;
    let e = extent_um;
    let half = (n / 2) as f64;
    let inside = |x: f64, y: f64| x.hypot(y) <= 0.5 * e;
    if pattern == ChartPattern::Uniform {
        return Ok(Array2::from_elem((n, n), 1.0));
    }
    let bar_w = 2.0 * pitch_um;
    // features in the (x, y) plane, um relative to the chart center
    let feature = |x: f64, y: f64| -> bool {
        let on_ring = (x.hypot(y) - 0.45 * e).abs() <= bar_w / 2.0;
        let bars = |u: f64, v: f64| {
            // three bars of width bar_w, gap 1.5 bar_w, length 0.15 e
            let v_ok = v.abs() <= 0.075 * e;
            let period = 2.5 * bar_w;
            let k = (u / period).round();
            v_ok && k.abs() <= 1.0 && (u - k * period).abs() <= bar_w / 2.0
        };
        let g = 0.22 * e;
        let horizontal = bars(y + g, x + g);
        let vertical = bars(x - g, y + g);
        let pt = pitch_um * 0.5;
        let points = (1..=3).any(|k| {
            let px = k as f64 * 0.09 * e;
            ((x - px).abs() <= pt && y.abs() <= pt) || ((y - px).abs() <= pt && x.abs() <= pt)
        });
        let center = x.abs() <= pt && y.abs() <= pt;
        on_ring || horizontal || vertical || points || center
    };
    Ok(Array2::from_shape_fn((n, n), |(i, j)| {
        let y = (i as f64 - half) * pitch_um;
        let x = (j as f64 - half) * pitch_um;
        if inside(x, y) && (feature(x, y) || feature(-x, -y)) {
            1.0
        } else {
            0.0
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn default_spiral_geometry() {
        let p = SpiralParams::default();
        let c = spiral_centers(&p).unwrap();
        assert_eq!(c.len(), 39);
        assert_eq!(p.axial_gap_um(), 3.0);
        assert_eq!(c[0][2], 95.0);
        assert_eq!(c[38][2], -95.0);
        let d0 = ((c[1][0] - c[0][0]).powi(2) + (c[1][1] - c[0][1]).powi(2)).sqrt();
        let dl = ((c[38][0] - c[37][0]).powi(2) + (c[38][1] - c[37][1]).powi(2)).sqrt();
        assert!((d0 - 3.0).abs() < 1e-6 && (dl - 7.0).abs() < 1e-6, "{d0} {dl}");
        let r = c.iter().map(|q| q[0].hypot(q[1])).fold(0.0, f64::max);
        assert!(2.0 * r + 2.0 <= 66.0 + 1e-9);
    }

    #[test]
    fn single_sphere_is_centered() {
        let p = SpiralParams {
            n_spheres: 1,
            ..SpiralParams::default()
        };
        let c = spiral_centers(&p).unwrap();
        assert_eq!(c, vec![[0.0, 0.0, 95.0]]);
    }

    #[test]
    fn voxelized_volume_matches_sphere() {
        let p = SpiralParams::default();
        let z = crate::wavesim::depth_grid(100.0, 5.0);
        let pitch = 0.75;
        let centers = spiral_centers(&p).unwrap();
        let want = 4.0 / 3.0 * PI;
        for c in centers.iter().take(5) {
            let v = voxelize_spheres(&[*c], 1.0, (96, 96), pitch, &z, 8).unwrap();
            let vol = v.intensities.sum() * pitch * pitch * 5.0;
            assert!((vol - want).abs() / want < 0.2, "{vol} vs {want}");
        }
    }

    #[test]
    fn chart_is_point_symmetric() {
        let c = fov_phantom(120.0, 0.75, ChartPattern::Chart).unwrap();
        let n = c.dim().0;
        for i in 0..n {
            for j in 0..n {
                assert_eq!(c[[i, j]], c[[n - 1 - i, n - 1 - j]]);
            }
        }
        let fill = c.sum() / c.len() as f64;
        assert!(fill > 0.02 && fill < 0.3, "{fill}");
        let u = fov_phantom(30.0, 0.75, ChartPattern::Uniform).unwrap();
        assert!(u.iter().all(|&v| v == 1.0));
    }
}
