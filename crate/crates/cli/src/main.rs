use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use serde_json::json;

use texopt_core::denoise::mock::{MockOptions, MockServer};
use texopt_core::denoise::DenoiserChoice;
use texopt_core::geometry::{load_mesh, shapes, write_obj_with_material, Camera, TriangleMesh};
use texopt_core::pipeline::{write_report, Pipeline, PipelineConfig, PipelineError};
use texopt_core::raster::{build_texel_table, rasterize_with_table, UvTexture};
use texopt_core::viewselect::{select_views, ViewSelectConfig};
use texopt_core::ColorImage;

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_DENOISER: u8 = 3;
const EXIT_GEOMETRY: u8 = 4;

/// Failure carrying the process exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn usage(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: EXIT_USAGE,
            error: error.into(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure {
            code: EXIT_FAILURE,
            error,
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let code = match &e {
            PipelineError::Config(_) => EXIT_USAGE,
            PipelineError::Denoise(_) => EXIT_DENOISER,
            PipelineError::Geometry(_)
            | PipelineError::ViewSelect(_)
            | PipelineError::Raster(_)
            | PipelineError::EmptyProjection
            | PipelineError::ZeroSelectedViews => EXIT_GEOMETRY,
            PipelineError::Io(_) => EXIT_FAILURE,
        };
        Failure {
            code,
            error: e.into(),
        }
    }
}

type CliResult = Result<(), Failure>;

#[derive(Parser)]
#[command(name = "texopt", version, about = "Texture optimization for UV-mapped meshes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Select viewpoints that cover the mesh and write a JSON report.
    SelectViews(SelectViewsArgs),
    /// Run initialization and refinement, writing texture, report and previews.
    Run(RunArgs),
    /// Render a textured mesh from one pose.
    Render(RenderArgs),
    /// Print the noise schedule and step plan as JSON.
    InspectSchedule(InspectArgs),
    /// Write a procedural test mesh and a matching run configuration.
    MakeFixture(FixtureArgs),
    /// Serve the remote denoiser protocol locally (echoes refine requests).
    MockServer(MockArgs),
}

#[derive(clap::Args)]
struct SelectViewsArgs {
    mesh: PathBuf,
    #[arg(long, default_value_t = 8192)]
    candidates: usize,
    #[arg(long, default_value_t = 1.0)]
    radius_min: f64,
    #[arg(long, default_value_t = 1.4)]
    radius_max: f64,
    #[arg(long, default_value_t = 45.0)]
    max_angle_deg: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct RunArgs {
    /// TOML configuration file.
    config: PathBuf,
    #[arg(long, value_enum)]
    denoiser: Option<DenoiserArg>,
    /// `section.key=value`, repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum DenoiserArg {
    Oracle,
    Procedural,
    Remote,
}

impl From<DenoiserArg> for DenoiserChoice {
    fn from(d: DenoiserArg) -> Self {
        match d {
            DenoiserArg::Oracle => DenoiserChoice::Oracle,
            DenoiserArg::Procedural => DenoiserChoice::Procedural,
            DenoiserArg::Remote => DenoiserChoice::Remote,
        }
    }
}

#[derive(clap::Args)]
struct RenderArgs {
    mesh: PathBuf,
    texture: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    azimuth: f64,
    #[arg(long, allow_negative_numbers = true)]
    elevation: f64,
    #[arg(long, default_value_t = 2.5)]
    radius: f64,
    #[arg(long, default_value_t = 512)]
    size: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct InspectArgs {
    /// Configuration to read the schedule from; defaults apply when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Shape {
    Icosphere,
    Cube,
    Quad,
}

#[derive(clap::Args)]
struct FixtureArgs {
    #[arg(long, value_enum, default_value = "icosphere")]
    shape: Shape,
    /// Icosphere subdivision level (20·4^n faces).
    #[arg(long, default_value_t = 3)]
    subdivisions: u32,
    #[arg(long, default_value = "a textured object")]
    prompt: String,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(clap::Args)]
struct MockArgs {
    #[arg(long, default_value_t = 8765)]
    port: u16,
    /// Answer this many requests with HTTP 500 first.
    #[arg(long, default_value_t = 0)]
    fail_first: usize,
    /// Reply with images one pixel too large.
    #[arg(long)]
    wrong_size: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::SelectViews(a) => cmd_select_views(a),
        Command::Run(a) => cmd_run(a),
        Command::Render(a) => cmd_render(a),
        Command::InspectSchedule(a) => cmd_inspect_schedule(a),
        Command::MakeFixture(a) => cmd_make_fixture(a),
        Command::MockServer(a) => cmd_mock_server(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn write_json(value: &serde_json::Value, out: Option<&Path>) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_normalized(path: &Path) -> Result<TriangleMesh, Failure> {
    let loaded = load_mesh(path).map_err(Failure::usage)?;
    loaded.mesh.normalized().map_err(Failure::usage)
}

fn cmd_select_views(a: SelectViewsArgs) -> CliResult {
    let cfg = ViewSelectConfig {
        candidates: a.candidates,
        radius_min: a.radius_min,
        radius_max: a.radius_max,
        max_angle_deg: a.max_angle_deg,
        seed: a.seed,
    };
    cfg.validate().map_err(Failure::usage)?;
    let mesh = load_normalized(&a.mesh)?;
    let start = Instant::now();
    let sel = select_views(&mesh, &cfg).map_err(Failure::usage)?;
    let wall_clock_ms = start.elapsed().as_secs_f64() * 1e3;
    let views: Vec<_> = sel
        .selected
        .indices
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            let cam: &Camera = &sel.candidates.cameras[c];
            json!({
                "candidate": c,
                "azimuth_deg": cam.azimuth_deg,
                "elevation_deg": cam.elevation_deg,
                "radius": cam.radius,
                "visible_faces": sel.visibility.column(c).count_ones(..),
                "new_faces": sel.selected.new_faces[k],
                "new_area": sel.selected.gains[k],
            })
        })
        .collect();
    let report = json!({
        "mesh": a.mesh,
        "faces": mesh.face_count(),
        "candidates": sel.candidates.len(),
        "selected": views,
        "coverage_area_fraction": sel.selected.coverage_area_fraction,
        "covered_faces": sel.selected.covered_faces.count_ones(..),
        "uncoverable_faces": sel.selected.uncoverable_faces,
        "warnings": sel.warnings.iter().map(|w| format!("{w:?}")).collect::<Vec<_>>(),
        "visibility_ms": sel.visibility_ms,
        "cover_ms": sel.cover_ms,
        "wall_clock_ms": wall_clock_ms,
    });
    write_json(&report, a.out.as_deref())?;
    Ok(())
}

fn cmd_run(a: RunArgs) -> CliResult {
    let mut overrides = a.overrides;
    if let Some(d) = a.denoiser {
        let name = match DenoiserChoice::from(d) {
            DenoiserChoice::Oracle => "oracle",
            DenoiserChoice::Procedural => "procedural",
            DenoiserChoice::Remote => "remote",
        };
        overrides.push(format!("denoiser=\"{name}\""));
    }
    let config = PipelineConfig::load(&a.config, &overrides)?;
    let pipeline = Pipeline::new(config)?;
    let outcome = pipeline.run();
    match (&outcome.error, &outcome.texture) {
        (None, Some(texture)) => {
            pipeline.export(&a.out_dir, texture, &outcome.report)?;
            let r = &outcome.report;
            println!(
                "texture {0}x{0} written to {1} (texel coverage {2:.4}, {3} views, {4:.1} s)",
                texture.resolution(),
                a.out_dir.join("texture.png").display(),
                r.texel_coverage_fraction.unwrap_or(0.0),
                r.view_selection.as_ref().map_or(0, |v| v.selected),
                r.total_ms / 1e3
            );
            if let Some(psnr) = r.oracle_psnr_db.last() {
                println!("oracle psnr {psnr:.2} dB");
            }
            Ok(())
        }
        _ => {
            write_report(&a.out_dir, &outcome.report)?;
            info!("partial report written to {}", a.out_dir.join("report.json").display());
            let error = outcome.error.unwrap_or(PipelineError::Io("run produced no texture".into()));
            Err(error.into())
        }
    }
}

fn cmd_render(a: RenderArgs) -> CliResult {
    if a.size == 0 {
        return Err(Failure::usage(anyhow!("--size must be positive")));
    }
    let camera = Camera::new(a.azimuth, a.elevation, a.radius).with_image_size(a.size);
    camera.validate().map_err(Failure::usage)?;
    let mesh = load_normalized(&a.mesh)?;
    let image = ColorImage::load_png(&a.texture)
        .with_context(|| format!("cannot read texture {}", a.texture.display()))
        .map_err(Failure::usage)?;
    let texture = UvTexture::from_image(&image)
        .with_context(|| format!("texture {} is unusable", a.texture.display()))
        .map_err(Failure::usage)?;
    let table = build_texel_table(&mesh, texture.resolution()).map_err(Failure::usage)?;
    let fb = rasterize_with_table(&mesh, &texture, &table, &camera);
    fb.color
        .save_png(&a.out)
        .with_context(|| format!("cannot write {}", a.out.display()))?;
    Ok(())
}

fn cmd_inspect_schedule(a: InspectArgs) -> CliResult {
    let config = match &a.config {
        Some(path) => PipelineConfig::load(path, &a.overrides)?,
        None => {
            let mut overrides = vec!["mesh=\"unused.obj\"".to_string()];
            overrides.extend(a.overrides);
            PipelineConfig::from_toml_str("", &overrides)?
        }
    };
    let sched = config.noise_schedule();
    let plan = config.step_plan();
    let report = json!({
        "schedule": config.schedule,
        "train_steps": sched.train_steps(),
        "reduced_steps": sched.reduced_steps(),
        "reduced_to_full": sched.reduced_to_full(),
        "reduced_alpha_bars": sched.reduced_alpha_bars(),
        "alpha_bars": sched.alpha_bars(),
        "plan": plan,
    });
    write_json(&report, a.out.as_deref())?;
    Ok(())
}

fn cmd_make_fixture(a: FixtureArgs) -> CliResult {
    let (name, mesh) = match a.shape {
        Shape::Icosphere => ("icosphere", shapes::icosphere(a.subdivisions)),
        Shape::Cube => ("cube", shapes::cube()),
        Shape::Quad => ("quad", shapes::unit_quad()),
    };
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("cannot create {}", a.out_dir.display()))?;
    let obj = a.out_dir.join(format!("{name}.obj"));
    write_obj_with_material(&mesh, &obj, "texture.png").with_context(|| format!("cannot write {}", obj.display()))?;
    let config = PipelineConfig {
        mesh: format!("{name}.obj").into(),
        prompt: a.prompt,
        ..PipelineConfig::default()
    };
    let path = a.out_dir.join("config.toml");
    std::fs::write(&path, config.to_toml_string()).with_context(|| format!("cannot write {}", path.display()))?;
    println!("{} ({} faces) and {}", obj.display(), mesh.face_count(), path.display());
    Ok(())
}

fn cmd_mock_server(a: MockArgs) -> CliResult {
    let server = MockServer::start(
        a.port,
        MockOptions {
            fail_first: a.fail_first,
            wrong_size: a.wrong_size,
        },
    )
    .with_context(|| format!("cannot listen on port {}", a.port))?;
    println!("{}", server.url());
    server.wait();
    Ok(())
}
