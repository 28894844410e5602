//! Initialization from six fixed poses followed by multi-resolution refinement over the
//! selected views.

mod config;
mod report;

use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use config::{apply_overrides, OracleConfig, PipelineConfig};
pub use report::{ErrorSummary, MeshSummary, RunReport, ScheduleSummary, StageLog, ViewLog, ViewSelectionSummary};

use crate::denoise::{
    clean_estimate, denoise_region_aware, prompt_augment, DenoiseContext, DenoiseError, DenoiserChoice, DenoiserKind,
    ProceduralPattern, RemoteConfig,
};
use crate::geometry::{load_mesh, write_obj_with_material, Camera, GeometryError, MeshWarning, TriangleMesh};
use crate::imagebuf::ColorImage;
use crate::raster::{
    build_texel_table, overlap_mask, project_to_texture, rasterize_with_table, FrameBuffer, RasterError, Region,
    TexelSurfaceTable, UvTexture,
};
use crate::schedule::{NoiseSchedule, StepPlan};
use crate::viewselect::{select_views, ViewSelectError, ViewSelection, VisibilityMatrix};

/// Initialization poses as (azimuth, elevation) in degrees.
pub const INIT_POSES: [(f64, f64); 6] = [(30.0, 60.0), (90.0, 110.0), (150.0, 60.0), (210.0, 110.0), (270.0, 60.0), (330.0, 110.0)];

/// Poses for the preview renders, disjoint from the initialization poses.
pub const PREVIEW_POSES: [(f64, f64); 4] = [(0.0, 75.0), (120.0, 100.0), (240.0, 75.0), (300.0, 120.0)];

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    ViewSelect(#[from] ViewSelectError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Denoise(#[from] DenoiseError),
    #[error("initialization wrote no texels: no face is visible from the initialization poses")]
    EmptyProjection,
    #[error("no views were selected for refinement")]
    ZeroSelectedViews,
    #[error("i/o error: {0}")]
    Io(String),
}

impl PipelineError {
    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "config",
            PipelineError::Geometry(_) => "geometry",
            PipelineError::ViewSelect(_) => "view_selection",
            PipelineError::Raster(_) => "raster",
            PipelineError::Denoise(_) => "denoiser",
            PipelineError::EmptyProjection => "empty_projection",
            PipelineError::ZeroSelectedViews => "zero_selected_views",
            PipelineError::Io(_) => "io",
        }
    }
}

fn io_error(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io(e.to_string())
}

/// Checker with a colour gradient, quantized to 8 bits so it survives PNG export.
pub fn ground_truth_texture(resolution: u32, cells: u32) -> UvTexture {
    let q = |c: f64| (c * 255.0).round() as f32 / 255.0;
    UvTexture::from_fn(resolution, |x, y| {
        let uv = UvTexture::texel_center(resolution, x, y);
        let n = cells.max(1) as f64;
        let odd = ((uv.x * n).floor() as i64 + (uv.y * n).floor() as i64) % 2 == 1;
        let base = if odd { [0.85, 0.35, 0.2] } else { [0.15, 0.45, 0.8] };
        let grad = [uv.x, uv.y, 1.0 - 0.5 * (uv.x + uv.y)];
        std::array::from_fn(|k| q(0.7 * base[k] + 0.3 * grad[k]))
    })
}

/// PSNR in dB of `texture` against `truth` over texels where `include` holds. The truth
/// is looked up at each texel centre, so the resolutions may differ.
pub fn texture_psnr(texture: &UvTexture, truth: &UvTexture, include: impl Fn(usize) -> bool) -> f64 {
    let res = texture.resolution();
    let (mut se, mut n) = (0.0f64, 0usize);
    for y in 0..res {
        for x in 0..res {
            let t = texture.index(x, y);
            if !include(t) {
                continue;
            }
            let uv = UvTexture::texel_center(res, x, y);
            let g = truth.rgb()[truth.nearest_index(uv.x as f32, uv.y as f32)];
            let c = texture.rgb()[t];
            for k in 0..3 {
                se += ((c[k] - g[k]) as f64).powi(2);
            }
            n += 3;
        }
    }
    if n == 0 {
        return f64::NAN;
    }
    let mse = se / n as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// Greedy nearest-neighbour tour by angle between view directions, starting from the
/// view with the largest covered area. Ties go to the lower index.
pub fn order_views(cameras: &[Camera], covered_area: &[f64]) -> Vec<usize> {
    assert_eq!(cameras.len(), covered_area.len());
    if cameras.is_empty() {
        return Vec::new();
    }
    let dirs: Vec<_> = cameras.iter().map(Camera::direction).collect();
    let mut start = 0;
    for (i, &a) in covered_area.iter().enumerate() {
        if a > covered_area[start] {
            start = i;
        }
    }
    let mut visited = vec![false; cameras.len()];
    let mut order = vec![start];
    visited[start] = true;
    let mut current = start;
    for _ in 1..cameras.len() {
        let mut best: Option<(f64, usize)> = None;
        for (i, d) in dirs.iter().enumerate() {
            if visited[i] {
                continue;
            }
            let angle = dirs[current].dot(d).clamp(-1.0, 1.0).acos();
            if best.is_none_or(|(b, _)| angle < b) {
                best = Some((angle, i));
            }
        }
        let (_, next) = best.expect("unvisited view remains");
        visited[next] = true;
        order.push(next);
        current = next;
    }
    order
}

/// Total angle travelled along `order`, in radians.
pub fn tour_length(cameras: &[Camera], order: &[usize]) -> f64 {
    order
        .windows(2)
        .map(|w| cameras[w[0]].direction().dot(&cameras[w[1]].direction()).clamp(-1.0, 1.0).acos())
        .sum()
}

fn column_area(vis: &VisibilityMatrix, candidate: usize) -> f64 {
    vis.column(candidate).ones().map(|f| vis.face_areas()[f]).sum()
}

enum Denoiser {
    Oracle { truth: UvTexture, table: TexelSurfaceTable },
    Procedural(ProceduralPattern),
    Remote(RemoteConfig),
}

/// Mutable state of the refinement loop.
#[derive(Debug, Clone)]
pub struct RunState {
    /// Completed refinement steps.
    pub n: usize,
    pub texture: UvTexture,
    /// Views in processing order.
    pub views: Vec<Camera>,
    pub logs: Vec<StageLog>,
}

/// Outcome of [`Pipeline::run`]: the report is always present, the texture only when
/// the run got past initialization.
pub struct RunOutcome {
    pub texture: Option<UvTexture>,
    pub report: RunReport,
    pub error: Option<PipelineError>,
}

pub struct Pipeline {
    config: PipelineConfig,
    source_mesh: TriangleMesh,
    mesh: TriangleMesh,
    mesh_warnings: Vec<MeshWarning>,
    sched: NoiseSchedule,
    plan: StepPlan,
    denoiser: Denoiser,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

impl Pipeline {
    /// Loads the configured mesh and prepares the denoiser.
    pub fn new(config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let loaded = load_mesh(&config.mesh)?;
        Self::build(config, loaded.mesh, loaded.warnings)
    }

    /// Uses `mesh` instead of reading the configured path.
    pub fn with_mesh(config: PipelineConfig, mesh: TriangleMesh) -> Result<Self, PipelineError> {
        config.validate()?;
        let warnings = mesh.warnings();
        Self::build(config, mesh, warnings)
    }

    fn build(config: PipelineConfig, source: TriangleMesh, mesh_warnings: Vec<MeshWarning>) -> Result<Self, PipelineError> {
        let mesh = source.normalized()?;
        let sched = config.noise_schedule();
        let plan = config.step_plan();
        let denoiser = match config.denoiser {
            DenoiserChoice::Oracle => {
                let truth = match &config.oracle.texture {
                    Some(path) => {
                        let img = ColorImage::load_png(path)
                            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
                        UvTexture::from_image(&img).map_err(|e| PipelineError::Config(e.to_string()))?
                    }
                    None => {
                        let res = match config.oracle.resolution {
                            0 => *plan.resolutions().last().expect("non-empty plan"),
                            r => r,
                        };
                        ground_truth_texture(res, config.oracle.checker_cells)
                    }
                };
                let table = build_texel_table(&mesh, truth.resolution())?;
                Denoiser::Oracle { truth, table }
            }
            DenoiserChoice::Procedural => Denoiser::Procedural(config.procedural),
            DenoiserChoice::Remote => Denoiser::Remote(config.remote.clone().with_env_override()),
        };
        Ok(Pipeline {
            config,
            source_mesh: source,
            mesh,
            mesh_warnings,
            sched,
            plan,
            denoiser,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    /// The normalized working mesh.
    pub fn mesh(&self) -> &TriangleMesh {
        &self.mesh
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.sched
    }

    pub fn plan(&self) -> &StepPlan {
        &self.plan
    }

    /// Ground-truth texture when the oracle denoiser is in use.
    pub fn ground_truth(&self) -> Option<&UvTexture> {
        match &self.denoiser {
            Denoiser::Oracle { truth, .. } => Some(truth),
            _ => None,
        }
    }

    fn camera(&self, azimuth: f64, elevation: f64, radius: f64) -> Camera {
        Camera::new(azimuth, elevation, radius).with_image_size(self.config.render_size)
    }

    /// Renders `texture` from `camera`.
    pub fn render(&self, texture: &UvTexture, camera: &Camera) -> Result<FrameBuffer, PipelineError> {
        let table = build_texel_table(&self.mesh, texture.resolution())?;
        Ok(rasterize_with_table(&self.mesh, texture, &table, camera))
    }

    fn denoiser_kind(&self, camera: &Camera) -> DenoiserKind {
        match &self.denoiser {
            Denoiser::Oracle { truth, table } => {
                DenoiserKind::Oracle(rasterize_with_table(&self.mesh, truth, table, camera).color)
            }
            Denoiser::Procedural(p) => DenoiserKind::Procedural(*p),
            Denoiser::Remote(r) => DenoiserKind::Remote(r.clone()),
        }
    }

    fn context(&self, fb: &FrameBuffer, camera: &Camera, seed: u64, t_start: usize) -> DenoiseContext {
        // augmented exactly once per view, always from the configured prompt
        let prompt = prompt_augment(&self.config.prompt, camera.azimuth_deg);
        DenoiseContext::new(prompt, fb.depth_image(), camera.azimuth_deg, seed, t_start).with_surface_uv(fb)
    }

    fn view_seed(&self, n: usize, view: usize) -> u64 {
        self.config.seed ^ ((n as u64) << 32) ^ view as u64
    }

    /// Candidate sampling, visibility and greedy cover; returns the selection and the
    /// processing order of the selected candidates.
    pub fn select_views(&self) -> Result<(ViewSelection, Vec<usize>), PipelineError> {
        let sel = select_views(&self.mesh, &self.config.viewselect)?;
        if sel.selected.is_empty() {
            return Err(PipelineError::ZeroSelectedViews);
        }
        let cams: Vec<Camera> = sel.selected.indices.iter().map(|&c| sel.candidates.cameras[c]).collect();
        let areas: Vec<f64> = sel.selected.indices.iter().map(|&c| column_area(&sel.visibility, c)).collect();
        let order = order_views(&cams, &areas).into_iter().map(|k| sel.selected.indices[k]).collect();
        Ok((sel, order))
    }

    /// Cameras for candidate indices, at the working render size.
    pub fn view_cameras(&self, sel: &ViewSelection, order: &[usize]) -> Vec<Camera> {
        order
            .iter()
            .map(|&c| sel.candidates.cameras[c].with_image_size(self.config.render_size))
            .collect()
    }

    /// Projects one generated image per initialization pose into a blank texture at the
    /// base resolution.
    pub fn stage1_init(&self) -> Result<(UvTexture, StageLog), PipelineError> {
        let start = Instant::now();
        let res = self.plan.entry(1).resolution;
        let table = build_texel_table(&self.mesh, res)?;
        let mut texture = UvTexture::blank(res);
        let mut views = Vec::new();
        for (k, &(az, el)) in INIT_POSES.iter().enumerate() {
            let t0 = Instant::now();
            let cam = self.camera(az, el, self.config.init_radius);
            let fb = rasterize_with_table(&self.mesh, &texture, &table, &cam);
            let ctx = self.context(&fb, &cam, self.view_seed(0, k), self.sched.reduced_steps());
            let est = clean_estimate(&self.denoiser_kind(&cam), &ctx, None, self.sched.reduced_steps())?;
            let stats = project_to_texture(&est.image, &fb, &table, &cam, &mut texture, &self.config.projection)?;
            views.push(ViewLog {
                view: k,
                azimuth_deg: az,
                elevation_deg: el,
                radius: cam.radius,
                prompt: ctx.prompt,
                overlap_pixels: 0,
                non_overlap_pixels: 0,
                uninitialized_pixels: fb.covered_count(),
                projection: stats,
                retries: est.retries,
                view_ms: ms_since(t0),
            });
        }
        if texture.written_count() == 0 {
            return Err(PipelineError::EmptyProjection);
        }
        let fresh = texture.fresh_count();
        texture.clear_fresh();
        let log = StageLog {
            n: 0,
            resolution: res,
            t_n: None,
            t1: None,
            t2: None,
            views,
            fresh_texels: fresh,
            written_texels: texture.written_count(),
            upsampled_to: None,
            stage_ms: ms_since(start),
        };
        Ok((texture, log))
    }

    /// One refinement sweep over all views at the current resolution, followed by the
    /// upsample to the next resolution unless this was the last step.
    pub fn stage2_step(&self, state: &mut RunState) -> Result<StageLog, PipelineError> {
        self.stage2_step_observed(state, |_| {})
    }

    /// Like `stage2_step`, calling `observe` with the refined texture before it is upsampled.
    pub fn stage2_step_observed(
        &self,
        state: &mut RunState,
        mut observe: impl FnMut(&UvTexture),
    ) -> Result<StageLog, PipelineError> {
        if state.views.is_empty() {
            return Err(PipelineError::ZeroSelectedViews);
        }
        let start = Instant::now();
        let n = state.n + 1;
        assert!(n <= self.plan.len(), "all {} steps already ran", self.plan.len());
        let entry = *self.plan.entry(n);
        assert_eq!(state.texture.resolution(), entry.resolution, "texture resolution out of plan");
        let table = build_texel_table(&self.mesh, entry.resolution)?;
        state.texture.clear_fresh();
        let mut views = Vec::with_capacity(state.views.len());
        for (k, cam) in state.views.iter().enumerate() {
            let t0 = Instant::now();
            let fb = rasterize_with_table(&self.mesh, &state.texture, &table, cam);
            let mask = overlap_mask(&fb, &state.texture)?;
            let seed = self.view_seed(n, k);
            let ctx = self.context(&fb, cam, seed, entry.t_n);
            let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
            rng.set_stream(((n as u64) << 32) | k as u64);
            let kind = self.denoiser_kind(cam);
            let refined = denoise_region_aware(&fb.color, &mask, &ctx, &entry, &self.sched, &kind, &mut rng)?;
            let stats = project_to_texture(&refined.image, &fb, &table, cam, &mut state.texture, &self.config.projection)?;
            views.push(ViewLog {
                view: k,
                azimuth_deg: cam.azimuth_deg,
                elevation_deg: cam.elevation_deg,
                radius: cam.radius,
                prompt: ctx.prompt,
                overlap_pixels: mask.count(Region::Overlap),
                non_overlap_pixels: mask.count(Region::NonOverlap),
                uninitialized_pixels: mask.count(Region::Uninitialized),
                projection: stats,
                retries: refined.retries,
                view_ms: ms_since(t0),
            });
        }
        observe(&state.texture);
        let fresh = state.texture.fresh_count();
        let written = state.texture.written_count();
        let mut upsampled_to = None;
        if n < self.plan.len() {
            let next = self.plan.entry(n + 1).resolution;
            state.texture = state.texture.upsample(next)?;
            upsampled_to = Some(next);
        }
        state.n = n;
        let log = StageLog {
            n,
            resolution: entry.resolution,
            t_n: Some(entry.t_n),
            t1: Some(entry.t1),
            t2: Some(entry.t2),
            views,
            fresh_texels: fresh,
            written_texels: written,
            upsampled_to,
            stage_ms: ms_since(start),
        };
        state.logs.push(log.clone());
        info!("step {n}: {fresh} texels refreshed at {}", entry.resolution);
        Ok(log)
    }

    fn oracle_psnr(&self, texture: &UvTexture) -> Option<f64> {
        let truth = self.ground_truth()?;
        let table = build_texel_table(&self.mesh, texture.resolution()).ok()?;
        Some(texture_psnr(texture, truth, |t| texture.written()[t] && table.owner(t).is_some()))
    }

    /// Runs every phase, recording progress in the report even when a phase fails.
    pub fn run(&self) -> RunOutcome {
        let start = Instant::now();
        let mut report = RunReport {
            config: Some(self.config.clone()),
            started_at: unix_now(),
            ..RunReport::default()
        };
        let mut texture = None;
        let error = self.run_phases(&mut report, &mut texture).err();
        if let Some(e) = &error {
            let phase = match report.phases_completed.last().map(String::as_str) {
                None | Some("load") => "view_selection".to_string(),
                Some("view_selection") => "init".to_string(),
                Some("init") => "step 1".to_string(),
                Some(step) => match step.strip_prefix("step ").and_then(|n| n.parse::<usize>().ok()) {
                    Some(n) => format!("step {}", n + 1),
                    None => "unknown".to_string(),
                },
            };
            report.error = Some(ErrorSummary {
                phase,
                kind: e.kind().to_string(),
                message: e.to_string(),
            });
        }
        report.finished_at = unix_now();
        report.total_ms = ms_since(start);
        RunOutcome {
            texture,
            report,
            error,
        }
    }

    fn run_phases(&self, report: &mut RunReport, out: &mut Option<UvTexture>) -> Result<(), PipelineError> {
        report.mesh = Some(MeshSummary {
            vertices: self.mesh.vertices().len(),
            faces: self.mesh.face_count(),
            closed: self.mesh.is_closed(),
            warnings: self.mesh_warnings.iter().map(|w| format!("{w:?}")).collect(),
        });
        report.schedule = Some(ScheduleSummary {
            train_steps: self.sched.train_steps(),
            reduced_to_full: self.sched.reduced_to_full().to_vec(),
            reduced_alpha_bars: self.sched.reduced_alpha_bars(),
            plan: self.plan.clone(),
        });
        report.phases_completed.push("load".into());

        let (sel, order) = self.select_views()?;
        report.view_selection = Some(ViewSelectionSummary {
            candidates: sel.candidates.len(),
            selected: sel.selected.len(),
            selected_indices: sel.selected.indices.clone(),
            order: order.clone(),
            coverage_area_fraction: sel.selected.coverage_area_fraction,
            uncoverable_faces: sel.selected.uncoverable_faces.len(),
            warnings: sel.warnings.iter().map(|w| format!("{w:?}")).collect(),
            visibility_ms: sel.visibility_ms,
            cover_ms: sel.cover_ms,
        });
        report.phases_completed.push("view_selection".into());

        let (texture, init_log) = self.stage1_init()?;
        report.remote_retries += init_log.views.iter().map(|v| v.retries).sum::<usize>();
        report.init = Some(init_log);
        report.oracle_psnr_db.extend(self.oracle_psnr(&texture));
        report.phases_completed.push("init".into());
        *out = Some(texture.clone());

        let mut state = RunState {
            n: 0,
            texture,
            views: self.view_cameras(&sel, &order),
            logs: Vec::new(),
        };
        while state.n < self.plan.len() {
            let result = self.stage2_step(&mut state);
            *out = Some(state.texture.clone());
            let log = result?;
            report.remote_retries += log.views.iter().map(|v| v.retries).sum::<usize>();
            report.steps.push(log);
            report.oracle_psnr_db.extend(self.oracle_psnr(&state.texture));
            report.phases_completed.push(format!("step {}", state.n));
        }
        let table = build_texel_table(&self.mesh, state.texture.resolution())?;
        let owned = table.owned_count().max(1);
        let covered = (0..table.len())
            .filter(|&t| table.owner(t).is_some() && state.texture.written()[t])
            .count();
        report.final_resolution = Some(state.texture.resolution());
        report.texel_coverage_fraction = Some(covered as f64 / owned as f64);
        Ok(())
    }

    /// Writes `texture.png`, `report.json`, `preview_0..3.png` and `mesh.obj`/`mesh.mtl`.
    pub fn export(&self, out_dir: &Path, texture: &UvTexture, report: &RunReport) -> Result<(), PipelineError> {
        std::fs::create_dir_all(out_dir).map_err(io_error)?;
        texture.save_png(out_dir.join("texture.png")).map_err(io_error)?;
        let table = build_texel_table(&self.mesh, texture.resolution())?;
        for (k, &(az, el)) in PREVIEW_POSES.iter().enumerate() {
            let cam = self.camera(az, el, self.config.init_radius);
            rasterize_with_table(&self.mesh, texture, &table, &cam)
                .color
                .save_png(out_dir.join(format!("preview_{k}.png")))
                .map_err(io_error)?;
        }
        write_obj_with_material(&self.source_mesh, &out_dir.join("mesh.obj"), "texture.png").map_err(io_error)?;
        write_report(out_dir, report)
    }
}

/// Writes `report.json` into `out_dir`.
pub fn write_report(out_dir: &Path, report: &RunReport) -> Result<(), PipelineError> {
    std::fs::create_dir_all(out_dir).map_err(io_error)?;
    let text = serde_json::to_string_pretty(report).map_err(io_error)?;
    std::fs::write(out_dir.join("report.json"), text + "\n").map_err(io_error)
}
