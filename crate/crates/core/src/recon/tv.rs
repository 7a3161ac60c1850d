//! Weighted forward-difference gradient with replicate boundary, its exact
//! adjoint, and the soft-threshold proximal map.

use ndarray::{s, Array3, Array4, ArrayView3, ArrayView4, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TvWeights {
    pub gamma_xy: f64,
    pub gamma_z: f64,
}

impl Default for TvWeights {
    fn default() -> Self {
        Self {
            gamma_xy: 1.0,
            gamma_z: 1.0,
        }
    }
}

impl TvWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_xy >= 0.0 && self.gamma_z >= 0.0) {
            return Err(Error::InvalidArgument("TV weights must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Gradient `[g_x, g_y, g_z]` of a `[z][y][x]` volume, shape `[3][z][y][x]`.
///
/// The last difference along each axis is zero (replicate boundary); an axis
/// of length one therefore has an identically zero gradient.
pub fn gradient_op(vol: ArrayView3<f64>, w: TvWeights) -> Array4<f64> {
    let (nz, ny, nx) = vol.dim();
    let mut g = Array4::<f64>::zeros((3, nz, ny, nx));
    if nx > 1 {
        let mut gx = g.slice_mut(s![0, .., .., ..nx - 1]);
        Zip::from(&mut gx)
            .and(vol.slice(s![.., .., 1..]))
            .and(vol.slice(s![.., .., ..nx - 1]))
            .for_each(|o, &a, &b| *o = w.gamma_xy * (a - b));
    }
    if ny > 1 {
        let mut gy = g.slice_mut(s![1, .., ..ny - 1, ..]);
        Zip::from(&mut gy)
            .and(vol.slice(s![.., 1.., ..]))
            .and(vol.slice(s![.., ..ny - 1, ..]))
            .for_each(|o, &a, &b| *o = w.gamma_xy * (a - b));
    }
    if nz > 1 {
        let mut gz = g.slice_mut(s![2, ..nz - 1, .., ..]);
        Zip::from(&mut gz)
            .and(vol.slice(s![1.., .., ..]))
            .and(vol.slice(s![..nz - 1, .., ..]))
            .for_each(|o, &a, &b| *o = w.gamma_z * (a - b));
    }
    g
}

/// Exact adjoint of [`gradient_op`] (a weighted negative divergence).
pub fn gradient_adjoint(g: ArrayView4<f64>, w: TvWeights) -> Array3<f64> {
    let (_, nz, ny, nx) = g.dim();
    let mut out = Array3::<f64>::zeros((nz, ny, nx));
    let comps = [(0usize, 2usize, w.gamma_xy), (1, 1, w.gamma_xy), (2, 0, w.gamma_z)];
    for (c, axis, gamma) in comps {
        let n = out.len_of(Axis(axis));
        if n < 2 {
            continue;
        }
        let gc = g.index_axis(Axis(0), c);
        // out[k] += gamma * (g[k-1] - g[k]) with g[n-1] treated as zero
        for k in 0..n {
            let mut o = out.index_axis_mut(Axis(axis), k);
            if k + 1 < n {
                o.scaled_add(-gamma, &gc.index_axis(Axis(axis), k));
            }
            if k >= 1 {
                o.scaled_add(gamma, &gc.index_axis(Axis(axis), k - 1));
            }
        }
    }
    out
}

/// Anisotropic total variation `sum |gamma * grad x|`.
pub fn tv_norm(vol: ArrayView3<f64>, w: TvWeights) -> f64 {
    gradient_op(vol, w).iter().map(|v| v.abs()).sum()
}

/// `sign(v) max(|v| - t, 0)`.
#[inline]
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}
