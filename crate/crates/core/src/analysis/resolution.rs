//! Two-point resolution: the smallest separation at which an 8-iteration
//! Richardson-Lucy reconstruction of a point pair shows a 20% dip.

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use super::metrics::{dip_between, local_maxima};
use crate::design::LayoutKind;
use crate::error::{Error, Result};
use crate::forward::ForwardModel;
use crate::recon::{richardson_lucy_model, RlNormalization};
use crate::wavesim::{PsfSimulator, PsfStack};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoPointParams {
    /// Lateral size of the reconstruction window in sensor pixels.
    pub window_px: usize,
    pub rl_iters: usize,
    pub dip_fraction: f64,
    /// Lateral search step; rounded to whole simulation samples.
    pub lateral_step_um: f64,
    pub max_lateral_um: f64,
    /// Axial search step (plane spacing is half of it).
    pub axial_step_um: f64,
    pub max_axial_um: f64,
}

impl Default for TwoPointParams {
    fn default() -> Self {
        Self {
            window_px: 40,
            rl_iters: 8,
            dip_fraction: 0.2,
            lateral_step_um: 0.15,
            max_lateral_um: 12.0,
            axial_step_um: 1.0,
            max_axial_um: 12.0,
        }
    }
}

impl TwoPointParams {
    pub fn validate(&self) -> Result<()> {
        if self.window_px < 8 || self.rl_iters == 0 {
            return Err(Error::Config("two-point window must be >= 8 px and rl_iters >= 1".into()));
        }
        if !(self.dip_fraction > 0.0 && self.dip_fraction < 1.0) {
            return Err(Error::Config("dip_fraction must lie in (0, 1)".into()));
        }
        for (k, v) in [
            ("lateral_step_um", self.lateral_step_um),
            ("max_lateral_um", self.max_lateral_um),
            ("axial_step_um", self.axial_step_um),
            ("max_axial_um", self.max_axial_um),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        Ok(())
    }
}

/// Outcome of one separation scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum Separation {
    Resolved { um: f64 },
    /// Not resolved at any tested separation up to `bound_um`.
    Unresolved { bound_um: f64 },
}

impl Separation {
    /// Resolution value, with unresolved scans reported at their bound.
    pub fn value_um(self) -> f64 {
        match self {
            Separation::Resolved { um } => um,
            Separation::Unresolved { bound_um } => bound_um,
        }
    }

    pub fn is_resolved(self) -> bool {
        matches!(self, Separation::Resolved { .. })
    }
}

/// Smallest `k` in `1..=max_k` with `test(k)`, assuming the predicate is
/// monotone: geometric coarse scan followed by bisection.
fn scan<F: FnMut(usize) -> Result<bool>>(first: usize, max_k: usize, mut test: F) -> Result<Option<usize>> {
    let mut lo = 0usize;
    let mut k = first.clamp(1, max_k.max(1));
    let hi = loop {
        if test(k)? {
            break k;
        }
        lo = k;
        if k >= max_k {
            return Ok(None);
        }
        k = (((k as f64) * 1.25).ceil() as usize).max(k + 1).min(max_k);
    };
    let mut hi = hi;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if test(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}

/// Whether two recovered maxima sit near the expected voxel positions and
/// show the required dip between them.
fn pair_resolved(vol: &Array3<f64>, truth: [[f64; 3]; 2], tol: [f64; 3], dip: f64) -> bool {
    let peak = vol.iter().cloned().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return false;
    }
    let maxima = local_maxima(vol.view(), 0.05 * peak);
    let near = |p: &[usize; 3], t: &[f64; 3]| (0..3).all(|a| (p[a] as f64 - t[a]).abs() <= tol[a]);
    let pick = |t: &[f64; 3], other: Option<[usize; 3]>| {
        maxima
            .iter()
            .filter(|(p, _)| near(p, t) && Some(*p) != other)
            .map(|(p, _)| *p)
            .next()
    };
    let Some(a) = pick(&truth[0], None) else { return false };
    let Some(b) = pick(&truth[1], Some(a)) else { return false };
    let fa = [a[0] as f64, a[1] as f64, a[2] as f64];
    let fb = [b[0] as f64, b[1] as f64, b[2] as f64];
    dip_between(vol.view(), fa, fb) >= dip
}

/// Lateral two-point resolution at depth `z_um` (object space).
///
/// The point pair is built by translating the simulated sensor intensity by
/// whole simulation samples before binning, so separations are multiples of
/// [`PsfSimulator::fine_object_pitch_um`].
pub fn two_point_lateral(sim: &PsfSimulator, z_um: f64, params: &TwoPointParams) -> Result<Separation> {
    params.validate()?;
    let intensity = sim.simulate_intensity([0.0, 0.0, z_um])?;
    let kernel = sim.bin_to_sensor(&intensity, (0, 0));
    let stack = PsfStack::new(kernel.insert_axis(Axis(0)), vec![z_um], sim.system().pixel_um)?;
    let w = params.window_px;
    let op = ForwardModel::new(&stack, (w, w))?;
    let fine = sim.fine_object_pitch_um();
    let o = sim.params().oversample as f64;
    let step = ((params.lateral_step_um / fine).round() as usize).max(1);
    let max_k = ((params.max_lateral_um / fine / step as f64).floor() as usize).max(1);
    let c = (w / 2) as f64;

    let test = |k: usize| -> Result<bool> {
        let m = (k * step) as isize;
        let a = -(m / 2);
        let b = m + a;
        let y: Array2<f64> = sim.bin_to_sensor(&intensity, (0, a)) + sim.bin_to_sensor(&intensity, (0, b));
        let r = richardson_lucy_model(&op, y.view(), params.rl_iters, RlNormalization::Sensitivity)?;
        let d_px = m as f64 / o;
        let tol_x = (d_px / 2.0).max(1.0) + 0.5;
        let truth = [[0.0, c, c + a as f64 / o], [0.0, c, c + b as f64 / o]];
        Ok(pair_resolved(&r.volume, truth, [0.0, 1.5, tol_x], params.dip_fraction))
    };
    let first = ((0.3 / fine) / step as f64).ceil() as usize;
    Ok(match scan(first, max_k, test)? {
        Some(k) => Separation::Resolved {
            um: (k * step) as f64 * fine,
        },
        None => Separation::Unresolved {
            bound_um: (max_k * step) as f64 * fine,
        },
    })
}

/// Axial two-point resolution for an on-axis pair centred on `z_um`.
/// Reconstruction planes are spaced `axial_step_um / 2`; the pair sits on
/// planes symmetric about `z_um`.
pub fn two_point_axial(sim: &PsfSimulator, z_um: f64, params: &TwoPointParams) -> Result<Separation> {
    params.validate()?;
    let h = params.axial_step_um / 2.0;
    let kmax = ((params.max_axial_um / params.axial_step_um).floor() as usize).max(1);
    let half = kmax + 2;
    let planes: Vec<f64> = (0..=2 * half).map(|i| z_um + (i as f64 - half as f64) * h).collect();
    let stack = sim.simulate_stack(&planes, [0.0, 0.0])?;
    let w = params.window_px.min(24);
    let op = ForwardModel::new(&stack, (w, w))?;
    let c = (w / 2) as f64;
    let test = |k: usize| -> Result<bool> {
        let y = &stack.kernel(half - k) + &stack.kernel(half + k);
        let r = richardson_lucy_model(&op, y.view(), params.rl_iters, RlNormalization::Sensitivity)?;
        let tol_z = (k as f64 / 2.0).max(1.0) + 0.5;
        let truth = [[(half - k) as f64, c, c], [(half + k) as f64, c, c]];
        Ok(pair_resolved(&r.volume, truth, [tol_z, 1.5, 1.5], params.dip_fraction))
    };
    Ok(match scan(1, kmax, test)? {
        Some(k) => Separation::Resolved {
            um: k as f64 * params.axial_step_um,
        },
        None => Separation::Unresolved {
            bound_um: kmax as f64 * params.axial_step_um,
        },
    })
}

/// Resolution against depth for one diffuser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionCurve {
    pub layout_kind: LayoutKind,
    pub z_positions_um: Vec<f64>,
    pub lateral: Vec<Separation>,
    /// Present when the axial scan was requested.
    pub axial: Option<Vec<Separation>>,
}

impl ResolutionCurve {
    pub fn lateral_res_um(&self) -> Vec<f64> {
        self.lateral.iter().map(|s| s.value_um()).collect()
    }

    pub fn axial_res_um(&self) -> Option<Vec<f64>> {
        self.axial.as_ref().map(|a| a.iter().map(|s| s.value_um()).collect())
    }

    /// Lateral value at the depth closest to `z_um`.
    pub fn lateral_at(&self, z_um: f64) -> Option<Separation> {
        let i = self
            .z_positions_um
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - z_um).abs().total_cmp(&(b.1 - z_um).abs()))?
            .0;
        Some(self.lateral[i])
    }
}

pub fn resolution_curve(
    sim: &PsfSimulator,
    layout: LayoutKind,
    z_list_um: &[f64],
    params: &TwoPointParams,
    axial: bool,
) -> Result<ResolutionCurve> {
    let mut lateral = Vec::with_capacity(z_list_um.len());
    let mut ax = Vec::new();
    for &z in z_list_um {
        let l = two_point_lateral(sim, z, params)?;
        log::info!("{layout} z = {z} um: lateral {l:?}");
        lateral.push(l);
        if axial {
            let a = two_point_axial(sim, z, params)?;
            log::info!("{layout} z = {z} um: axial {a:?}");
            ax.push(a);
        }
    }
    Ok(ResolutionCurve {
        layout_kind: layout,
        z_positions_um: z_list_um.to_vec(),
        lateral,
        axial: axial.then_some(ax),
    })
}
