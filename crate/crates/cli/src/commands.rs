use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fdscope::analysis::{depth_psfs, depth_study, fov_study, resolution_curve, DepthResult, FovResult, ResolutionCurve};
use fdscope::config::{ExperimentConfig, ReconMethod, StudyKind};
use fdscope::container::{sha256_hex, ArrayContainer};
use fdscope::design::DesignReport;
use fdscope::forward::{add_gaussian_noise, forward_project, Measurement, Volume};
use fdscope::recon::{admm_tv, richardson_lucy};
use fdscope::surface::{self, DiffuserSurface, SurfaceMeta};
use fdscope::wavesim::{PsfSimulator, PsfStack};
use fdscope::LayoutKind;
use ndarray::{Array2, Ix2};
use serde::{Deserialize, Serialize};

use crate::output::{read_container, runtime, write_container, write_csv, write_json, write_jsonl, Provenance};
use crate::{CliError, CliResult};

pub struct Context {
    pub config: ExperimentConfig,
    pub config_sha256: String,
    pub out_dir: PathBuf,
}

impl Context {
    pub fn new(config: ExperimentConfig) -> CliResult<Self> {
        let hashed = ExperimentConfig {
            out_dir: None,
            ..config.clone()
        };
        let config_sha256 = sha256_hex(hashed.canonical_json()?.as_bytes());
        let out_dir = config.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
        std::fs::create_dir_all(&out_dir)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out_dir.display())))?;
        Ok(Self {
            config,
            config_sha256,
            out_dir,
        })
    }

    fn provenance(&self, command: &str, inputs: BTreeMap<String, String>) -> Provenance {
        Provenance {
            tool: concat!("fdscope ", env!("CARGO_PKG_VERSION")).into(),
            command: command.into(),
            config_sha256: self.config_sha256.clone(),
            seed: self.config.seed,
            inputs,
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn generate_surface(&self, layout: LayoutKind) -> CliResult<DiffuserSurface> {
        let c = &self.config;
        Ok(surface::generate(
            &c.system,
            layout,
            c.sim.mask_index,
            c.sim.sim_pitch_um(&c.system),
            c.design_half_range_um,
            c.seed,
        )?)
    }

    fn simulator(&self, surf: &DiffuserSurface) -> CliResult<PsfSimulator> {
        Ok(PsfSimulator::new(&self.config.system, surf, &self.config.sim)?)
    }
}

#[derive(Serialize, Deserialize)]
pub struct DesignDocument {
    pub provenance: serde_json::Value,
    pub report: DesignReport,
}

#[derive(Serialize, Deserialize)]
pub struct SurfaceDocument {
    pub provenance: serde_json::Value,
    pub meta: SurfaceMeta,
}

fn to_value(p: &Provenance) -> serde_json::Value {
    serde_json::to_value(p).expect("provenance serializes")
}

pub fn design(ctx: &Context) -> CliResult<()> {
    let report = DesignReport::from_system(&ctx.config.system)?;
    let doc = DesignDocument {
        provenance: to_value(&ctx.provenance("design", BTreeMap::new())),
        report,
    };
    println!("{}", serde_json::to_string_pretty(&doc.report).map_err(runtime("serialize"))?);
    write_json(&ctx.path("design.json"), &doc)
}

pub fn surface(ctx: &Context) -> CliResult<()> {
    let surf = ctx.generate_surface(ctx.config.layout_kind)?;
    let prov = ctx.provenance("surface", BTreeMap::new());
    let c = ArrayContainer::from_real(
        &surf.height_map,
        surf.grid_pitch_um,
        None,
        ctx.config.seed,
        prov.to_header_string(),
    )?;
    write_container(&ctx.path("surface.bin"), &c)?;
    write_json(
        &ctx.path("surface.json"),
        &SurfaceDocument {
            provenance: to_value(&prov),
            meta: surf.meta(),
        },
    )
}

/// Load a surface container plus its `.json` metadata sibling.
fn load_surface(path: &Path) -> CliResult<(DiffuserSurface, BTreeMap<String, String>)> {
    let (c, hash) = read_container(path)?;
    let meta_path = path.with_extension("json");
    let meta_bytes = std::fs::read(&meta_path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", meta_path.display())))?;
    let doc: SurfaceDocument = serde_json::from_slice(&meta_bytes)
        .map_err(|e| CliError::Runtime(format!("{}: meta: {e}", meta_path.display())))?;
    let heights = c
        .real2()
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let surf = DiffuserSurface::from_parts(doc.meta, heights)?;
    let mut inputs = BTreeMap::new();
    inputs.insert("surface".to_string(), hash);
    inputs.insert("surface_meta".to_string(), sha256_hex(&meta_bytes));
    Ok((surf, inputs))
}

pub fn psfs(ctx: &Context, surface_path: Option<&Path>) -> CliResult<()> {
    let (surf, inputs) = match surface_path {
        Some(p) => load_surface(p)?,
        None => (ctx.generate_surface(ctx.config.layout_kind)?, BTreeMap::new()),
    };
    let sim = ctx.simulator(&surf)?;
    log::info!("simulating {} PSFs on a {}^2 grid", ctx.config.psf_z_um.len(), sim.grid_size());
    let stack = sim.simulate_stack(&ctx.config.psf_z_um, [0.0, 0.0])?;
    let prov = ctx.provenance("psfs", inputs);
    let c = ArrayContainer::from_real(
        &stack.kernels,
        stack.sensor_pitch_um,
        Some(stack.z_positions_um.clone()),
        ctx.config.seed,
        prov.to_header_string(),
    )?;
    write_container(&ctx.path("psfs.bin"), &c)
}

fn load_psfs(path: &Path) -> CliResult<(PsfStack, String)> {
    let (c, hash) = read_container(path)?;
    let bad = |field: &str, msg: &str| CliError::Runtime(format!("{}: container error in {field}: {msg}", path.display()));
    let z = c
        .header
        .z_positions_um
        .clone()
        .ok_or_else(|| bad("z_positions_um", "a PSF stack needs depths"))?;
    let k = c.real3().map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let stack = PsfStack::new(k, z, c.header.pitch_um).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    Ok((stack, hash))
}

fn same_depths(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-9 * (1.0 + x.abs()))
}

pub fn forward(ctx: &Context, volume_path: &Path, psf_path: &Path) -> CliResult<()> {
    let (vc, vhash) = read_container(volume_path)?;
    let (stack, phash) = load_psfs(psf_path)?;
    let z = vc.header.z_positions_um.clone().ok_or_else(|| {
        CliError::Runtime(format!("{}: container error in z_positions_um: a volume needs depths", volume_path.display()))
    })?;
    if !same_depths(&z, &stack.z_positions_um) {
        return Err(CliError::Runtime(format!(
            "{}: container error in z_positions_um: depths differ from {}",
            volume_path.display(),
            psf_path.display()
        )));
    }
    let x = vc.real3().map_err(|e| CliError::Runtime(format!("{}: {e}", volume_path.display())))?;
    let vol = Volume::new(x, vc.header.pitch_um, z)?;
    let clean = forward_project(&vol, &stack)?;
    let meas = add_gaussian_noise(&clean, ctx.config.noise_level, ctx.config.seed)?;
    let mut inputs = BTreeMap::new();
    inputs.insert("volume".to_string(), vhash);
    inputs.insert("psfs".to_string(), phash);
    let prov = ctx.provenance("forward", inputs);
    let c = ArrayContainer::from_real(&meas.image, meas.sensor_pitch_um, None, ctx.config.seed, prov.to_header_string())?;
    write_container(&ctx.path("measurement.bin"), &c)
}

#[derive(Serialize)]
struct LikelihoodRecord {
    iter: usize,
    log_likelihood: f64,
}

#[derive(Serialize)]
struct ReconSummary {
    provenance: serde_json::Value,
    method: ReconMethod,
    status: serde_json::Value,
    iterations: usize,
    objective: Option<f64>,
    log_likelihood: Option<f64>,
}

pub fn reconstruct(ctx: &Context, meas_path: &Path, psf_path: &Path) -> CliResult<()> {
    let (mc, mhash) = read_container(meas_path)?;
    let (stack, phash) = load_psfs(psf_path)?;
    let image = mc
        .real()
        .and_then(|a| {
            a.into_dimensionality::<Ix2>().map_err(|_| fdscope::Error::Container {
                field: "shape".into(),
                msg: format!("expected a 2D measurement, found {:?}", mc.header.shape),
            })
        })
        .map_err(|e| CliError::Runtime(format!("{}: {e}", meas_path.display())))?;
    let meas = Measurement {
        image,
        sensor_pitch_um: mc.header.pitch_um,
    };
    let rc = &ctx.config.recon;
    let n = rc.lateral_px;
    let pitch = rc.lateral_pitch_um.unwrap_or_else(|| ctx.config.system.object_pixel_um());
    let mut inputs = BTreeMap::new();
    inputs.insert("measurement".to_string(), mhash);
    inputs.insert("psfs".to_string(), phash);
    let prov = ctx.provenance("reconstruct", inputs);

    let (vol, summary) = match rc.method {
        ReconMethod::Admm => {
            let (vol, r) = admm_tv(&meas, &stack, (n, n), pitch, &rc.solver)?;
            write_jsonl(&ctx.path("telemetry.jsonl"), &r.records)?;
            let s = ReconSummary {
                provenance: to_value(&prov),
                method: rc.method,
                status: serde_json::to_value(r.status).map_err(runtime("serialize"))?,
                iterations: r.iterations,
                objective: Some(r.objective),
                log_likelihood: None,
            };
            (vol, s)
        }
        ReconMethod::RichardsonLucy => {
            let (vol, r) = richardson_lucy(&meas, &stack, (n, n), pitch, rc.rl_iters, rc.rl_normalization)?;
            let rows: Vec<_> = r
                .log_likelihood
                .iter()
                .enumerate()
                .map(|(iter, &log_likelihood)| LikelihoodRecord { iter, log_likelihood })
                .collect();
            write_jsonl(&ctx.path("telemetry.jsonl"), &rows)?;
            let s = ReconSummary {
                provenance: to_value(&prov),
                method: rc.method,
                status: serde_json::to_value(r.status).map_err(runtime("serialize"))?,
                iterations: r.log_likelihood.len().saturating_sub(1),
                objective: None,
                log_likelihood: r.log_likelihood.last().copied(),
            };
            (vol, s)
        }
    };
    let c = ArrayContainer::from_real(
        &vol.intensities,
        vol.lateral_pitch_um,
        Some(vol.z_positions_um.clone()),
        ctx.config.seed,
        prov.to_header_string(),
    )?;
    write_container(&ctx.path("reconstruction.bin"), &c)?;
    write_json(&ctx.path("reconstruct.json"), &summary)
}

pub fn study(ctx: &Context, kind: StudyKind) -> CliResult<()> {
    match kind {
        StudyKind::Resolution => study_resolution(ctx),
        StudyKind::Fov => study_fov(ctx),
        StudyKind::Depthrange => study_depth(ctx),
    }
}

#[derive(Serialize)]
struct ResolutionDocument {
    provenance: serde_json::Value,
    theory: DesignReport,
    curves: Vec<ResolutionCurve>,
}

#[derive(Serialize)]
struct ResolutionRow {
    layout: LayoutKind,
    z_um: f64,
    lateral_um: f64,
    lateral_resolved: bool,
    axial_um: Option<f64>,
    axial_resolved: Option<bool>,
}

fn study_resolution(ctx: &Context) -> CliResult<()> {
    let c = &ctx.config;
    let mut curves = Vec::new();
    for &layout in &c.study.layouts {
        let surf = ctx.generate_surface(layout)?;
        let sim = ctx.simulator(&surf)?;
        curves.push(resolution_curve(
            &sim,
            layout,
            &c.study.resolution.z_list_um,
            &c.study.resolution.two_point,
            c.study.resolution.axial,
        )?);
    }
    let mut rows = Vec::new();
    for cv in &curves {
        for (i, &z) in cv.z_positions_um.iter().enumerate() {
            let a = cv.axial.as_ref().map(|a| a[i]);
            rows.push(ResolutionRow {
                layout: cv.layout_kind,
                z_um: z,
                lateral_um: cv.lateral[i].value_um(),
                lateral_resolved: cv.lateral[i].is_resolved(),
                axial_um: a.map(|s| s.value_um()),
                axial_resolved: a.map(|s| s.is_resolved()),
            });
        }
    }
    write_csv(&ctx.path("resolution.csv"), &rows)?;
    write_json(
        &ctx.path("resolution.json"),
        &ResolutionDocument {
            provenance: to_value(&ctx.provenance("study resolution", BTreeMap::new())),
            theory: DesignReport::from_system(&c.system)?,
            curves,
        },
    )
}

#[derive(Serialize)]
struct FovDocument {
    provenance: serde_json::Value,
    results: Vec<FovResult>,
}

#[derive(Serialize)]
struct FovSummaryRow {
    layout: LayoutKind,
    psnr_db: f64,
    ghost_ratio: f64,
    min_cosine_similarity: f64,
}

#[derive(Serialize)]
struct SimilarityRow {
    layout: LayoutKind,
    shift_um: f64,
    cosine_similarity: f64,
    registration_failed: bool,
}

fn image_container(a: &Array2<f64>, pitch: f64, prov: &Provenance) -> CliResult<ArrayContainer> {
    Ok(ArrayContainer::from_real(a, pitch, None, prov.seed, prov.to_header_string())?)
}

fn study_fov(ctx: &Context) -> CliResult<()> {
    let c = &ctx.config;
    let prov = ctx.provenance("study fov", BTreeMap::new());
    let mut results = Vec::new();
    let mut summary = Vec::new();
    let mut sims = Vec::new();
    for (k, &layout) in c.study.layouts.iter().enumerate() {
        let surf = ctx.generate_surface(layout)?;
        let sim = ctx.simulator(&surf)?;
        let r = fov_study(&sim, layout, &c.study.fov, c.seed)?;
        if k == 0 {
            write_container(&ctx.path("fov_chart.bin"), &image_container(&r.chart, r.pitch_um, &prov)?)?;
        }
        if let Some(m) = &r.measurement {
            let name = format!("{}_fov_measurement.bin", layout.name().to_lowercase());
            write_container(&ctx.path(&name), &image_container(&m.image, m.sensor_pitch_um, &prov)?)?;
        }
        let name = format!("{}_fov_reconstruction.bin", layout.name().to_lowercase());
        write_container(&ctx.path(&name), &image_container(&r.reconstruction, r.pitch_um, &prov)?)?;
        summary.push(FovSummaryRow {
            layout,
            psnr_db: r.psnr_db,
            ghost_ratio: r.ghost.ratio,
            min_cosine_similarity: r.min_similarity,
        });
        let s = &r.similarity;
        for i in 0..s.shift_positions_um.len() {
            sims.push(SimilarityRow {
                layout,
                shift_um: s.shift_positions_um[i],
                cosine_similarity: s.cosine_similarity[i],
                registration_failed: s.registration_failed[i],
            });
        }
        log::info!(
            "{layout}: PSNR {:.2} dB, ghost ratio {:.4}, min similarity {:.3}",
            r.psnr_db,
            r.ghost.ratio,
            r.min_similarity
        );
        results.push(r);
    }
    write_csv(&ctx.path("fov_summary.csv"), &summary)?;
    write_csv(&ctx.path("fov_similarity.csv"), &sims)?;
    write_json(
        &ctx.path("fov.json"),
        &FovDocument {
            provenance: to_value(&prov),
            results,
        },
    )
}

#[derive(Serialize)]
struct DepthDocument {
    provenance: serde_json::Value,
    results: Vec<DepthResult>,
}

#[derive(Serialize)]
struct SphereRow {
    layout: LayoutKind,
    sphere: usize,
    z_um: f64,
    resolved: bool,
}

#[derive(Serialize)]
struct DepthSummaryRow {
    layout: LayoutKind,
    resolved_spheres: usize,
    resolved_z_min_um: Option<f64>,
    resolved_z_max_um: Option<f64>,
    dof_um: f64,
}

fn volume_container(v: &Volume, prov: &Provenance) -> CliResult<ArrayContainer> {
    Ok(ArrayContainer::from_real(
        &v.intensities,
        v.lateral_pitch_um,
        Some(v.z_positions_um.clone()),
        prov.seed,
        prov.to_header_string(),
    )?)
}

fn study_depth(ctx: &Context) -> CliResult<()> {
    let c = &ctx.config;
    let prov = ctx.provenance("study depthrange", BTreeMap::new());
    let mut results = Vec::new();
    let mut spheres = Vec::new();
    let mut summary = Vec::new();
    for (k, &layout) in c.study.layouts.iter().enumerate() {
        let surf = ctx.generate_surface(layout)?;
        let sim = ctx.simulator(&surf)?;
        let psfs = depth_psfs(&sim, &c.study.depth)?;
        let r = depth_study(&psfs, &c.system, layout, &c.study.depth, c.seed)?;
        let tag = layout.name().to_lowercase();
        if k == 0 {
            if let Some(p) = &r.phantom {
                write_container(&ctx.path("depth_phantom.bin"), &volume_container(p, &prov)?)?;
            }
        }
        if let Some(m) = &r.measurement {
            let name = format!("{tag}_depth_measurement.bin");
            write_container(&ctx.path(&name), &image_container(&m.image, m.sensor_pitch_um, &prov)?)?;
        }
        if let Some(v) = &r.reconstruction {
            write_container(&ctx.path(&format!("{tag}_depth_reconstruction.bin")), &volume_container(v, &prov)?)?;
        }
        for (i, (&z, &ok)) in r.count.sphere_z_um.iter().zip(&r.count.sphere_resolved).enumerate() {
            spheres.push(SphereRow {
                layout,
                sphere: i,
                z_um: z,
                resolved: ok,
            });
        }
        summary.push(DepthSummaryRow {
            layout,
            resolved_spheres: r.count.resolved,
            resolved_z_min_um: r.resolved_z_min_um,
            resolved_z_max_um: r.resolved_z_max_um,
            dof_um: r.dof_um,
        });
        log::info!("{layout}: {} of {} spheres resolved", r.count.resolved, r.count.sphere_z_um.len());
        results.push(r);
    }
    write_csv(&ctx.path("depth_spheres.csv"), &spheres)?;
    write_csv(&ctx.path("depth_summary.csv"), &summary)?;
    write_json(
        &ctx.path("depth.json"),
        &DepthDocument {
            provenance: to_value(&prov),
            results,
        },
    )
}
