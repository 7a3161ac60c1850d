//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Everything here is cheap enough to run on every slider change: the design
//! formulas, a coarse render of the diffuser height map, and the geometric
//! resolution-versus-depth curve of each layout.

use fdscope::design::{self, DesignReport, LayoutKind, OpticalSystem};
use fdscope::surface;
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

/// Knobs exposed on the page; everything else follows the 20x reference.
#[derive(Debug, Clone, Copy, Deserialize)]
pub struct Knobs {
    pub n_lenslets_1d: u32,
    pub pitch_mm: f64,
    pub f_ave_mm: f64,
    pub obj_na: f64,
    pub wavelength_um: f64,
    pub z_half_range_um: f64,
}

fn system(k: &Knobs) -> Result<OpticalSystem, String> {
    let mut sys = OpticalSystem::reference_20x();
    sys.n_lenslets_1d = k.n_lenslets_1d;
    sys.pitch_mm = k.pitch_mm;
    sys.f_ave_mm = k.f_ave_mm;
    sys.obj_na = k.obj_na;
    sys.wavelength_um = k.wavelength_um;
    sys.pupil_diameter_mm = 2.0 * sys.obj_focal_mm * sys.obj_na;
    sys.set_focal_range(k.z_half_range_um).map_err(|e| e.to_string())?;
    sys.validate().map_err(|e| e.to_string())?;
    Ok(sys)
}

#[derive(Serialize)]
struct ReportOut {
    report: DesignReport,
    f_min_mm: f64,
    f_max_mm: f64,
}

pub fn report_json(knobs: &str) -> Result<String, String> {
    let k: Knobs = serde_json::from_str(knobs).map_err(|e| e.to_string())?;
    let sys = system(&k)?;
    let out = ReportOut {
        report: DesignReport::from_system(&sys).map_err(|e| e.to_string())?,
        f_min_mm: sys.f_min_mm,
        f_max_mm: sys.f_max_mm,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

/// Grayscale RGBA render (`size` x `size`) of the diffuser height map,
/// brighter = thicker.
pub fn surface_rgba(knobs: &str, layout: &str, seed: u64, size: usize) -> Result<Vec<u8>, String> {
    let k: Knobs = serde_json::from_str(knobs).map_err(|e| e.to_string())?;
    let layout: LayoutKind = layout.parse().map_err(|e: fdscope::Error| e.to_string())?;
    let sys = system(&k)?;
    let aperture_um = sys.n_lenslets_1d as f64 * sys.pitch_mm * 1000.0;
    let pitch_um = aperture_um / (2 * size) as f64;
    let s = surface::generate(&sys, layout, 1.56, pitch_um, k.z_half_range_um, seed).map_err(|e| e.to_string())?;
    let h = &s.height_map;
    let max = h.iter().cloned().fold(0.0, f64::max).max(1e-12);
    let n = h.nrows();
    let mut out = Vec::with_capacity(size * size * 4);
    for i in 0..size {
        for j in 0..size {
            let v = h[[i * (n - 1) / (size - 1).max(1), j * (n - 1) / (size - 1).max(1)]] / max;
            let g = (255.0 * v).round() as u8;
            out.extend_from_slice(&[g, g, g, 255]);
        }
    }
    Ok(out)
}

/// Geometric lateral resolution (um) at each depth of `z_um`: the in-focus
/// limit or the circle of confusion of the best-focused lenslet, whichever
/// is larger.
pub fn resolution_curve(knobs: &str, layout: &str, seed: u64, z_um: &[f64]) -> Result<Vec<f64>, String> {
    let k: Knobs = serde_json::from_str(knobs).map_err(|e| e.to_string())?;
    let layout: LayoutKind = layout.parse().map_err(|e: fdscope::Error| e.to_string())?;
    let sys = system(&k)?;
    let focal: Vec<f64> = surface::layout_lenslets(&sys, layout, k.z_half_range_um, seed)
        .map_err(|e| e.to_string())?
        .iter()
        .map(|l| design::focus_depth_um(&sys, l.focal_mm))
        .collect();
    let r0 = design::lateral_resolution(&sys);
    Ok(z_um
        .iter()
        .map(|&z| {
            focal
                .iter()
                .map(|&zf| design::defocused_lateral_resolution(&sys, z - zf).max(r0))
                .fold(f64::INFINITY, f64::min)
        })
        .collect())
}

#[wasm_bindgen]
pub fn design_report(knobs: &str) -> Result<String, JsValue> {
    report_json(knobs).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn render_surface(knobs: &str, layout: &str, seed: u32, size: usize) -> Result<Vec<u8>, JsValue> {
    surface_rgba(knobs, layout, seed as u64, size).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn lateral_resolution_vs_depth(knobs: &str, layout: &str, seed: u32, z_um: &[f64]) -> Result<Vec<f64>, JsValue> {
    resolution_curve(knobs, layout, seed as u64, z_um).map_err(|e| JsValue::from_str(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const REF: &str = r#"{"n_lenslets_1d":5,"pitch_mm":3.6,"f_ave_mm":58.5,"obj_na":1.0,"wavelength_um":0.51,"z_half_range_um":100}"#;

    #[test]
    fn reference_report() {
        let v: serde_json::Value = serde_json::from_str(&report_json(REF).unwrap()).unwrap();
        assert!((v["report"]["magnification"].as_f64().unwrap() - 6.5).abs() < 1e-9);
        assert!((v["f_min_mm"].as_f64().unwrap() - 54.6).abs() < 0.3);
    }

    #[test]
    fn surface_render_shape() {
        let px = surface_rgba(REF, "RMM", 3, 64).unwrap();
        assert_eq!(px.len(), 64 * 64 * 4);
        assert!(px.chunks(4).any(|p| p[0] > 0));
    }

    #[test]
    fn multifocal_curve_is_flatter() {
        let z: Vec<f64> = (-10..=10).map(|i| i as f64 * 10.0).collect();
        let worst = |l| resolution_curve(REF, l, 1, &z).unwrap().into_iter().fold(0.0, f64::max);
        assert!(worst("RMM") < 0.5 * worst("MLA"));
        let mla = resolution_curve(REF, "MLA", 1, &[0.0]).unwrap()[0];
        assert!((mla - design::lateral_resolution(&OpticalSystem::reference_20x())).abs() < 1e-9);
    }

    #[test]
    fn bad_input_is_reported() {
        assert!(report_json("{}").is_err());
        assert!(surface_rgba(REF, "XYZ", 0, 8).is_err());
    }
}
