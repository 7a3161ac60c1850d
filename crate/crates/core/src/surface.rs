//! Height maps for MLA, RUM and RMM diffusers.
//!
//! Every lenslet is a plano-convex spherical cap with its vertex on a common
//! plane. The diffuser is the point-wise maximum of all caps, so each sample
//! belongs to exactly one lenslet (100% fill factor) and random layouts get
//! Voronoi-like apertures of varying size and shape.

use ndarray::Array2;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::design::{focal_length_schedule, LayoutKind, OpticalSystem};
use crate::error::{Error, Result};
use crate::{par, rng};

/// Minimum center spacing of random layouts as a fraction of the pitch.
pub const MIN_SPACING_FRACTION: f64 = 0.7;
/// Full restarts attempted before random placement gives up.
pub const MAX_RESTARTS: usize = 10_000;
const TRIES_PER_CENTER: usize = 2_000;
/// Densest packing fraction of equal disks in the plane.
const HEX_DENSITY: f64 = 0.9069;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LensletSpec {
    pub center_xy_mm: [f64; 2],
    pub focal_mm: f64,
    pub pitch_mm: f64,
}

#[derive(Debug, Clone)]
pub struct DiffuserSurface {
    /// Sag heights in um, `[row = y][col = x]`, minimum zero.
    pub height_map: Array2<f64>,
    pub grid_pitch_um: f64,
    pub refractive_index: f64,
    pub lenslets: Vec<LensletSpec>,
    pub layout_kind: LayoutKind,
    pub rng_seed: u64,
    /// Index of the lenslet governing each sample.
    pub owner: Array2<u16>,
}

/// Metadata stored next to a height map on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceMeta {
    pub layout_kind: LayoutKind,
    pub refractive_index: f64,
    pub grid_pitch_um: f64,
    pub rng_seed: u64,
    pub lenslets: Vec<LensletSpec>,
}

/// Physical coordinate (same unit as `pitch`) of sample `i` in an `n`-point
/// grid centered at index `n / 2`.
#[inline]
pub fn grid_coord(i: usize, n: usize, pitch: f64) -> f64 {
    (i as f64 - (n / 2) as f64) * pitch
}

/// Regular `n_1d x n_1d` grid of centers with pitch `aperture / n_1d`.
pub fn place_centers_grid(aperture_mm: f64, n_1d: usize) -> Vec<[f64; 2]> {
    let p = aperture_mm / n_1d as f64;
    let off = (n_1d as f64 - 1.0) / 2.0;
    let mut out = Vec::with_capacity(n_1d * n_1d);
    for iy in 0..n_1d {
        for ix in 0..n_1d {
            out.push([(ix as f64 - off) * p, (iy as f64 - off) * p]);
        }
    }
    out
}

/// Uniform random centers inside the square aperture with pairwise spacing
/// at least `0.7 * pitch`.
pub fn place_centers_random(
    aperture_mm: f64,
    n_lenslets: usize,
    pitch_mm: f64,
    seed: u64,
) -> Result<Vec<[f64; 2]>> {
    if n_lenslets == 0 {
        return Err(Error::InvalidArgument("n_lenslets must be >= 1".into()));
    }
    if !(aperture_mm > 0.0 && pitch_mm > 0.0) {
        return Err(Error::InvalidArgument("aperture and pitch must be positive".into()));
    }
    let dmin = MIN_SPACING_FRACTION * pitch_mm;
    // Disks of radius dmin/2 around each center must pack into the aperture
    // grown by dmin/2 on every side.
    let need = n_lenslets as f64 * std::f64::consts::PI * (dmin / 2.0).powi(2);
    let avail = HEX_DENSITY * (aperture_mm + dmin).powi(2);
    if need > avail {
        return Err(Error::PlacementInfeasible(format!(
            "{n_lenslets} centers with spacing {dmin:.4} mm cannot fit in a {aperture_mm} mm aperture"
        )));
    }
    let mut rng = rng::substream(seed, rng::PLACEMENT);
    let half = aperture_mm / 2.0;
    let d2 = dmin * dmin;
    let mut centers: Vec<[f64; 2]> = Vec::with_capacity(n_lenslets);
    for _ in 0..MAX_RESTARTS {
        centers.clear();
        'grow: while centers.len() < n_lenslets {
            for _ in 0..TRIES_PER_CENTER {
                let c = [rng.random_range(-half..half), rng.random_range(-half..half)];
                let ok = centers
                    .iter()
                    .all(|q| (q[0] - c[0]).powi(2) + (q[1] - c[1]).powi(2) >= d2);
                if ok {
                    centers.push(c);
                    continue 'grow;
                }
            }
            break;
        }
        if centers.len() == n_lenslets {
            return Ok(centers);
        }
    }
    Err(Error::PlacementInfeasible(format!(
        "no valid layout of {n_lenslets} centers after {MAX_RESTARTS} restarts"
    )))
}

/// Radius of curvature (mm) of a plano-convex lenslet: `f (n_r - 1)`.
pub fn radius_of_curvature_mm(focal_mm: f64, refractive_index: f64) -> f64 {
    focal_mm * (refractive_index - 1.0)
}

/// Spherical sag in um at `xy_mm`, measured from the lenslet vertex plane and
/// clamped to the hemisphere edge beyond the radius of curvature.
pub fn sag_profile(lenslet: &LensletSpec, refractive_index: f64, xy_mm: [f64; 2]) -> f64 {
    let r2 = (xy_mm[0] - lenslet.center_xy_mm[0]).powi(2)
        + (xy_mm[1] - lenslet.center_xy_mm[1]).powi(2);
    sag_r2(radius_of_curvature_mm(lenslet.focal_mm, refractive_index), r2) * 1000.0
}

#[inline]
fn sag_r2(radius_mm: f64, r2: f64) -> f64 {
    let rr = radius_mm * radius_mm;
    if r2 >= rr {
        radius_mm
    } else {
        // R - sqrt(R^2 - r^2) without cancellation near the vertex.
        r2 / (radius_mm + (rr - r2).sqrt())
    }
}

/// Point-wise maximum of the lenslet caps on an odd-sized grid covering the
/// square aperture.
pub fn compose_surface(
    lenslets: Vec<LensletSpec>,
    layout_kind: LayoutKind,
    refractive_index: f64,
    grid_pitch_um: f64,
    aperture_mm: f64,
    seed: u64,
) -> Result<DiffuserSurface> {
    if lenslets.is_empty() {
        return Err(Error::InvalidArgument("surface needs at least one lenslet".into()));
    }
    if lenslets.len() > u16::MAX as usize {
        return Err(Error::InvalidArgument("too many lenslets".into()));
    }
    if !(refractive_index > 1.0) {
        return Err(Error::InvalidArgument("mask index must exceed 1".into()));
    }
    if !(grid_pitch_um > 0.0 && aperture_mm > 0.0) {
        return Err(Error::InvalidArgument("grid pitch and aperture must be positive".into()));
    }
    for l in &lenslets {
        if !(l.focal_mm > 0.0) {
            return Err(Error::InvalidArgument(format!("lenslet focal length {}", l.focal_mm)));
        }
    }
    let n = 2 * (aperture_mm * 500.0 / grid_pitch_um - 1e-9).ceil() as usize + 1;
    let dx_mm = grid_pitch_um / 1000.0;
    let radii: Vec<f64> = lenslets
        .iter()
        .map(|l| radius_of_curvature_mm(l.focal_mm, refractive_index))
        .collect();

    let mut height = Array2::<f64>::zeros((n, n));
    let mut owner = Array2::<u16>::zeros((n, n));
    let lens = &lenslets;
    let radii = &radii;
    // Rows are filled independently; owner is recomputed per row to keep the
    // two arrays in lock-step without shared mutable state.
    let mut rows: Array2<(f64, u16)> = Array2::from_elem((n, n), (0.0, 0));
    par::for_each_row(&mut rows, |iy, mut row| {
        let y = grid_coord(iy, n, dx_mm);
        for (ix, cell) in row.iter_mut().enumerate() {
            let x = grid_coord(ix, n, dx_mm);
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0u16;
            for (k, l) in lens.iter().enumerate() {
                let r2 = (x - l.center_xy_mm[0]).powi(2) + (y - l.center_xy_mm[1]).powi(2);
                let h = -sag_r2(radii[k], r2);
                if h > best {
                    best = h;
                    arg = k as u16;
                }
            }
            *cell = (best * 1000.0, arg);
        }
    });
    let mut hmin = f64::INFINITY;
    for ((h, o), &(v, k)) in height.iter_mut().zip(owner.iter_mut()).zip(rows.iter()) {
        *h = v;
        *o = k;
        hmin = hmin.min(v);
    }
    height.mapv_inplace(|v| v - hmin);

    Ok(DiffuserSurface {
        height_map: height,
        grid_pitch_um,
        refractive_index,
        lenslets,
        layout_kind,
        rng_seed: seed,
        owner,
    })
}

/// Complex transmission `exp(i 2 pi / lambda (n_r - 1) h)`.
pub fn phase_screen(surface: &DiffuserSurface, wavelength_um: f64) -> Array2<Complex64> {
    let k = 2.0 * std::f64::consts::PI / wavelength_um * (surface.refractive_index - 1.0);
    surface.height_map.mapv(|h| Complex64::from_polar(1.0, k * h))
}

/// Lenslet list for a layout of the given system.
///
/// RMM focal lengths follow the dioptric schedule for `+-z_half_range_um`,
/// assigned to positions by a seeded random permutation.
pub fn layout_lenslets(
    sys: &OpticalSystem,
    layout: LayoutKind,
    z_half_range_um: f64,
    seed: u64,
) -> Result<Vec<LensletSpec>> {
    let n1 = sys.n_lenslets_1d as usize;
    let count = n1 * n1;
    let aperture = n1 as f64 * sys.pitch_mm;
    let centers = match layout {
        LayoutKind::Mla => place_centers_grid(aperture, n1),
        LayoutKind::Rum | LayoutKind::Rmm => {
            place_centers_random(aperture, count, sys.pitch_mm, seed)?
        }
    };
    let focals = match layout {
        LayoutKind::Rmm => {
            let mut f = focal_length_schedule(sys, z_half_range_um, count)?;
            f.shuffle(&mut rng::substream(seed, rng::PERMUTATION));
            f
        }
        _ => vec![sys.f_ave_mm; count],
    };
    Ok(centers
        .into_iter()
        .zip(focals)
        .map(|(c, f)| LensletSpec {
            center_xy_mm: c,
            focal_mm: f,
            pitch_mm: sys.pitch_mm,
        })
        .collect())
}

/// Generate a complete diffuser for `sys`.
pub fn generate(
    sys: &OpticalSystem,
    layout: LayoutKind,
    refractive_index: f64,
    grid_pitch_um: f64,
    z_half_range_um: f64,
    seed: u64,
) -> Result<DiffuserSurface> {
    sys.validate()?;
    let lenslets = layout_lenslets(sys, layout, z_half_range_um, seed)?;
    let aperture = sys.n_lenslets_1d as f64 * sys.pitch_mm;
    compose_surface(lenslets, layout, refractive_index, grid_pitch_um, aperture, seed)
}

impl DiffuserSurface {
    pub fn size(&self) -> usize {
        self.height_map.nrows()
    }

    /// Physical coordinate in mm of grid index `i`.
    pub fn coord_mm(&self, i: usize) -> f64 {
        grid_coord(i, self.size(), self.grid_pitch_um / 1000.0)
    }

    /// Lenslet with the highest cap at `xy_mm` (the one whose aperture
    /// contains that point).
    pub fn governing_lenslet(&self, xy_mm: [f64; 2]) -> usize {
        let mut best = f64::NEG_INFINITY;
        let mut arg = 0;
        for (k, l) in self.lenslets.iter().enumerate() {
            let h = -sag_profile(l, self.refractive_index, xy_mm);
            if h > best {
                best = h;
                arg = k;
            }
        }
        arg
    }

    /// Area in mm^2 of each lenslet's aperture, optionally restricted to a
    /// centered disk of radius `clip_radius_mm`.
    pub fn lenslet_areas_mm2(&self, clip_radius_mm: Option<f64>) -> Vec<f64> {
        let n = self.size();
        let dx = self.grid_pitch_um / 1000.0;
        let mut out = vec![0.0; self.lenslets.len()];
        for ((iy, ix), &o) in self.owner.indexed_iter() {
            if let Some(r) = clip_radius_mm {
                let (x, y) = (grid_coord(ix, n, dx), grid_coord(iy, n, dx));
                if x * x + y * y > r * r {
                    continue;
                }
            }
            out[o as usize] += dx * dx;
        }
        out
    }

    pub fn meta(&self) -> SurfaceMeta {
        SurfaceMeta {
            layout_kind: self.layout_kind,
            refractive_index: self.refractive_index,
            grid_pitch_um: self.grid_pitch_um,
            rng_seed: self.rng_seed,
            lenslets: self.lenslets.clone(),
        }
    }

    /// Rebuild a surface from stored metadata and heights. The owner map is
    /// recomputed from the lenslet list.
    pub fn from_parts(meta: SurfaceMeta, height_map: Array2<f64>) -> Result<Self> {
        let (r, c) = height_map.dim();
        if r != c || r % 2 == 0 {
            return Err(Error::Shape(format!("surface grid must be odd and square, got {r}x{c}")));
        }
        let n = r;
        let dx = meta.grid_pitch_um / 1000.0;
        let mut s = DiffuserSurface {
            height_map,
            grid_pitch_um: meta.grid_pitch_um,
            refractive_index: meta.refractive_index,
            lenslets: meta.lenslets,
            layout_kind: meta.layout_kind,
            rng_seed: meta.rng_seed,
            owner: Array2::zeros((n, n)),
        };
        let owner = Array2::from_shape_fn((n, n), |(iy, ix)| {
            s.governing_lenslet([grid_coord(ix, n, dx), grid_coord(iy, n, dx)]) as u16
        });
        s.owner = owner;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lens(c: [f64; 2], f: f64) -> LensletSpec {
        LensletSpec {
            center_xy_mm: c,
            focal_mm: f,
            pitch_mm: 3.6,
        }
    }

    #[test]
    fn sag_examples() {
        let l = lens([0.0, 0.0], 58.5);
        assert_eq!(sag_profile(&l, 1.56, [0.0, 0.0]), 0.0);
        assert!((radius_of_curvature_mm(58.5, 1.56) - 32.76).abs() < 1e-12);
        let s = sag_profile(&l, 1.56, [1.8, 0.0]) / 1000.0;
        let want = 32.76 - (32.76f64.powi(2) - 1.8f64.powi(2)).sqrt();
        assert!((s - want).abs() < 1e-12);
        assert!((s - 0.04947).abs() / 0.04947 < 1e-3);
        let mut prev = -1.0;
        for i in 0..=100 {
            let v = sag_profile(&l, 1.56, [i as f64 * 0.3276, 0.0]);
            assert!(v >= prev);
            prev = v;
        }
        assert!((sag_profile(&l, 1.56, [40.0, 0.0]) - 32760.0).abs() < 1e-9);
    }

    #[test]
    fn grid_centers() {
        assert_eq!(place_centers_grid(18.0, 1), vec![[0.0, 0.0]]);
        let g = place_centers_grid(18.0, 5);
        assert_eq!(g.len(), 25);
        assert!((g[1][0] - g[0][0] - 3.6).abs() < 1e-12);
        for c in &g {
            assert!(g.iter().any(|d| d[0] == c[1] && d[1] == c[0]));
            assert!(g.iter().any(|d| d[0] == -c[0] && d[1] == -c[1]));
        }
    }

    #[test]
    fn random_centers_spacing_and_determinism() {
        let a = place_centers_random(18.0, 25, 3.6, 11).unwrap();
        assert_eq!(a.len(), 25);
        for i in 0..25 {
            for j in 0..i {
                let d = ((a[i][0] - a[j][0]).powi(2) + (a[i][1] - a[j][1]).powi(2)).sqrt();
                assert!(d >= 2.52 - 1e-12);
            }
            assert!(a[i][0].abs() < 9.0 && a[i][1].abs() < 9.0);
        }
        assert_eq!(a, place_centers_random(18.0, 25, 3.6, 11).unwrap());
        assert_ne!(a, place_centers_random(18.0, 25, 3.6, 12).unwrap());
        assert_eq!(place_centers_random(1.0, 1, 3.6, 0).unwrap().len(), 1);
    }

    #[test]
    fn infeasible_placement_is_reported() {
        let e = place_centers_random(1.0, 400, 1.0, 0).unwrap_err();
        assert!(matches!(e, Error::PlacementInfeasible(_)));
    }

    #[test]
    fn single_lenslet_surface_is_inverted_bowl() {
        let l = lens([0.0, 0.0], 2.0);
        let s = compose_surface(vec![l.clone()], LayoutKind::Mla, 1.5, 10.0, 0.4, 0).unwrap();
        let n = s.size();
        let c = n / 2;
        let top = s.height_map[[c, c]];
        for iy in 0..n {
            for ix in 0..n {
                let xy = [s.coord_mm(ix), s.coord_mm(iy)];
                let want = top - sag_profile(&l, 1.5, xy);
                assert!((s.height_map[[iy, ix]] - want).abs() < 1e-9);
            }
        }
        assert!(s.height_map.iter().all(|&h| h >= 0.0 && h.is_finite()));
    }

    #[test]
    fn mla_surface_has_grid_symmetry() {
        let sys = OpticalSystem::desk_scale();
        let s = generate(&sys, LayoutKind::Mla, 1.56, 6.0, 100.0, 0).unwrap();
        let h = &s.height_map;
        let n = s.size();
        for iy in 0..n {
            for ix in 0..n {
                let v = h[[iy, ix]];
                assert!((v - h[[ix, iy]]).abs() < 1e-9);
                assert!((v - h[[n - 1 - iy, ix]]).abs() < 1e-9);
                assert!((v - h[[iy, n - 1 - ix]]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rmm_centers_govern_themselves_and_focals_match_schedule() {
        let sys = OpticalSystem::desk_scale();
        let s = generate(&sys, LayoutKind::Rmm, 1.56, 8.0, 100.0, 3).unwrap();
        for (k, l) in s.lenslets.iter().enumerate() {
            assert_eq!(s.governing_lenslet(l.center_xy_mm), k);
        }
        let mut got: Vec<f64> = s.lenslets.iter().map(|l| l.focal_mm).collect();
        got.sort_by(f64::total_cmp);
        let want = focal_length_schedule(&sys, 100.0, 25).unwrap();
        assert_eq!(got, want);
        // the permutation actually scrambles the order
        let raw: Vec<f64> = s.lenslets.iter().map(|l| l.focal_mm).collect();
        assert_ne!(raw, want);
    }

    #[test]
    fn phase_screen_unit_modulus() {
        let sys = OpticalSystem::desk_scale();
        let s = generate(&sys, LayoutKind::Rum, 1.56, 8.0, 100.0, 5).unwrap();
        let t = phase_screen(&s, 0.51);
        for v in t.iter() {
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
        let mut flat = s.clone();
        flat.height_map.fill(0.0);
        assert!(phase_screen(&flat, 0.51).iter().all(|v| *v == Complex64::new(1.0, 0.0)));
    }

    #[test]
    fn from_parts_recovers_owner_map() {
        let sys = OpticalSystem::desk_scale();
        let s = generate(&sys, LayoutKind::Rum, 1.56, 10.0, 100.0, 9).unwrap();
        let back = DiffuserSurface::from_parts(s.meta(), s.height_map.clone()).unwrap();
        assert_eq!(back.owner, s.owner);
    }
}
