use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use texopt_core::denoise::mock::{MockOptions, MockServer};
use texopt_core::denoise::DenoiserChoice;
use texopt_core::geometry::{shapes, Camera, TriangleMesh};
use texopt_core::pipeline::{
    order_views, tour_length, Pipeline, PipelineConfig, PipelineError, RunState, INIT_POSES,
};
use texopt_core::raster::{build_texel_table, rasterize_with_table, UvTexture};

fn small_config() -> PipelineConfig {
    let mut cfg = PipelineConfig {
        mesh: "icosphere.obj".into(),
        prompt: "a ball".into(),
        seed: 3,
        render_size: 128,
        ..PipelineConfig::default()
    };
    cfg.viewselect.candidates = 256;
    cfg.pipeline.steps = 2;
    cfg.pipeline.base_resolution = 96;
    cfg
}

fn pipeline(cfg: PipelineConfig) -> Pipeline {
    Pipeline::with_mesh(cfg, shapes::icosphere(2)).unwrap()
}

fn max_channel_diff(a: [f32; 3], b: [f32; 3]) -> f32 {
    (0..3).map(|k| (a[k] - b[k]).abs()).fold(0.0, f32::max)
}

/// Drops wall-clock fields so two reports can be compared.
fn strip_timing(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(map) => {
            map.retain(|k, _| !k.ends_with("_ms") && !k.ends_with("_at"));
            map.values_mut().for_each(strip_timing);
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

fn flipped(mesh: &TriangleMesh) -> TriangleMesh {
    let tris = mesh.triangles().iter().map(|&[a, b, c]| [a, c, b]).collect();
    let uvs = mesh.corner_uvs().iter().map(|&[a, b, c]| [a, c, b]).collect();
    TriangleMesh::new(mesh.vertices().to_vec(), tris, uvs).unwrap()
}

#[test]
fn oracle_init_matches_ground_truth_on_visible_texels() {
    let mut cfg = small_config();
    cfg.oracle.resolution = cfg.pipeline.base_resolution;
    let p = pipeline(cfg);
    let truth = p.ground_truth().unwrap().clone();
    let (texture, log) = p.stage1_init().unwrap();
    assert_eq!(log.views.len(), INIT_POSES.len());
    assert!(texture.written_count() > 0);
    assert_eq!(texture.fresh_count(), 0);
    for t in (0..texture.len()).filter(|&t| texture.written()[t]) {
        assert!(max_channel_diff(texture.rgb()[t], truth.rgb()[t]) <= 1.0 / 255.0 + 1e-6, "texel {t}");
    }
}

#[test]
fn one_oracle_step_reproduces_the_target() {
    let mut cfg = small_config();
    cfg.pipeline.steps = 1;
    cfg.oracle.resolution = cfg.pipeline.base_resolution;
    let p = pipeline(cfg);
    let truth = p.ground_truth().unwrap().clone();
    let (texture, _) = p.stage1_init().unwrap();
    let (sel, order) = p.select_views().unwrap();
    let mut state = RunState {
        n: 0,
        texture,
        views: p.view_cameras(&sel, &order),
        logs: Vec::new(),
    };
    let log = p.stage2_step(&mut state).unwrap();
    assert_eq!(log.upsampled_to, None);
    assert_eq!(state.n, 1);
    assert!(state.texture.fresh_count() > 0);
    for t in (0..state.texture.len()).filter(|&t| state.texture.written()[t]) {
        assert!(max_channel_diff(state.texture.rgb()[t], truth.rgb()[t]) <= 1e-3, "texel {t}");
    }
}

#[test]
fn zero_views_is_an_error() {
    let p = pipeline(small_config());
    let mut state = RunState {
        n: 0,
        texture: UvTexture::blank(96),
        views: Vec::new(),
        logs: Vec::new(),
    };
    assert!(matches!(p.stage2_step(&mut state), Err(PipelineError::ZeroSelectedViews)));
}

#[test]
fn downward_quad_projects_nothing_from_the_init_poses() {
    // the lower init cameras see the quad at more than 45 degrees, the upper ones from behind
    let p = Pipeline::with_mesh(small_config(), flipped(&shapes::unit_quad())).unwrap();
    assert!(matches!(p.stage1_init(), Err(PipelineError::EmptyProjection)));
    let out = p.run();
    assert!(matches!(out.error, Some(PipelineError::EmptyProjection)));
    let err = out.report.error.unwrap();
    assert_eq!((err.phase.as_str(), err.kind.as_str()), ("init", "empty_projection"));
    assert_eq!(out.report.phases_completed, vec!["load", "view_selection"]);
}

#[test]
fn run_follows_the_resolution_plan() {
    let mut cfg = small_config();
    cfg.pipeline.steps = 3;
    let p = pipeline(cfg);
    let out = p.run();
    assert!(out.error.is_none(), "{:?}", out.error);
    let plan = p.plan().resolutions();
    let texture = out.texture.unwrap();
    assert_eq!(texture.resolution(), *plan.last().unwrap());
    let r = &out.report;
    assert_eq!(r.steps.len(), 3);
    for (k, s) in r.steps.iter().enumerate() {
        assert_eq!(s.resolution, plan[k]);
        assert_eq!(s.upsampled_to, plan.get(k + 1).copied());
        assert_eq!(s.views.len(), r.view_selection.as_ref().unwrap().selected);
    }
    assert_eq!(r.phases_completed, vec!["load", "view_selection", "init", "step 1", "step 2", "step 3"]);
    assert_eq!(r.oracle_psnr_db.len(), 4);
    assert!(r.texel_coverage_fraction.unwrap() > 0.8);
}

#[test]
fn single_step_run_equals_init_plus_one_step() {
    let mut cfg = small_config();
    cfg.pipeline.steps = 1;
    let p = pipeline(cfg);
    let out = p.run();
    assert_eq!(out.report.steps.len(), 1);
    let (texture, _) = p.stage1_init().unwrap();
    let (sel, order) = p.select_views().unwrap();
    let mut state = RunState {
        n: 0,
        texture,
        views: p.view_cameras(&sel, &order),
        logs: Vec::new(),
    };
    p.stage2_step(&mut state).unwrap();
    assert_eq!(out.texture.unwrap().rgb(), state.texture.rgb());
}

#[test]
fn coverage_never_shrinks_across_steps() {
    let mut cfg = small_config();
    cfg.pipeline.steps = 3;
    let p = pipeline(cfg);
    let (texture, _) = p.stage1_init().unwrap();
    let (sel, order) = p.select_views().unwrap();
    let mut state = RunState {
        n: 0,
        texture,
        views: p.view_cameras(&sel, &order),
        logs: Vec::new(),
    };
    let mut previous = state.texture.clone();
    while state.n < p.plan().len() {
        p.stage2_step(&mut state).unwrap();
        let res = previous.resolution();
        let now = &state.texture;
        for y in 0..res {
            for x in 0..res {
                if previous.written()[previous.index(x, y)] {
                    let uv = UvTexture::texel_center(res, x, y);
                    assert!(now.written()[now.nearest_index(uv.x as f32, uv.y as f32)], "step {} lost ({x},{y})", state.n);
                }
            }
        }
        previous = state.texture.clone();
    }
}

#[test]
fn runs_are_deterministic() {
    for choice in [DenoiserChoice::Oracle, DenoiserChoice::Procedural] {
        let mut cfg = small_config();
        cfg.denoiser = choice;
        let a = pipeline(cfg.clone()).run();
        let b = pipeline(cfg).run();
        let (ta, tb) = (a.texture.unwrap(), b.texture.unwrap());
        assert_eq!(ta.to_image().encode_png().unwrap(), tb.to_image().encode_png().unwrap());
        let mut ra = serde_json::to_value(&a.report).unwrap();
        let mut rb = serde_json::to_value(&b.report).unwrap();
        strip_timing(&mut ra);
        strip_timing(&mut rb);
        assert_eq!(ra, rb);
    }
}

#[test]
fn pattern_seed_changes_the_procedural_result() {
    let mut cfg = small_config();
    cfg.denoiser = DenoiserChoice::Procedural;
    cfg.pipeline.steps = 1;
    let a = pipeline(cfg.clone()).run().texture.unwrap();
    cfg.procedural.seed += 1;
    let b = pipeline(cfg).run().texture.unwrap();
    assert_ne!(a.rgb(), b.rgb());
}

#[test]
fn remote_run_against_mock_server_recovers_from_failures() {
    let server = MockServer::start(
        0,
        MockOptions {
            fail_first: 2,
            ..MockOptions::default()
        },
    )
    .unwrap();
    let mut cfg = small_config();
    cfg.pipeline.steps = 1;
    cfg.denoiser = DenoiserChoice::Remote;
    cfg.remote.endpoint = server.url().to_string();
    cfg.remote.backoff_ms = 1;
    let out = Pipeline::with_mesh(cfg, shapes::icosphere(2)).unwrap().run();
    assert!(out.error.is_none(), "{:?}", out.error);
    assert_eq!(out.report.remote_retries, 2);
    let views = out.report.view_selection.as_ref().unwrap().selected;
    assert_eq!(server.request_count(), 2 + INIT_POSES.len() + views);
}

#[test]
fn dead_remote_endpoint_keeps_a_partial_report() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut cfg = small_config();
    cfg.denoiser = DenoiserChoice::Remote;
    cfg.remote.endpoint = format!("http://127.0.0.1:{port}/generate");
    cfg.remote.retries = 1;
    cfg.remote.backoff_ms = 1;
    let out = Pipeline::with_mesh(cfg, shapes::icosphere(2)).unwrap().run();
    assert!(matches!(out.error, Some(PipelineError::Denoise(_))));
    assert!(out.texture.is_none());
    let err = out.report.error.as_ref().unwrap();
    assert_eq!((err.phase.as_str(), err.kind.as_str()), ("init", "denoiser"));
    assert_eq!(out.report.phases_completed, vec!["load", "view_selection"]);
    assert!(out.report.view_selection.is_some());
}

#[test]
fn export_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.pipeline.steps = 1;
    let p = pipeline(cfg);
    let out = p.run();
    let texture = out.texture.unwrap();
    p.export(dir.path(), &texture, &out.report).unwrap();
    for name in ["texture.png", "report.json", "mesh.obj", "mesh.mtl"] {
        assert!(dir.path().join(name).is_file(), "{name}");
    }
    for k in 0..4 {
        let img = texopt_core::ColorImage::load_png(dir.path().join(format!("preview_{k}.png"))).unwrap();
        assert_eq!(img.dims(), (128, 128));
    }
    let back = texopt_core::ColorImage::load_png(dir.path().join("texture.png")).unwrap();
    assert_eq!(back.dims(), (96, 96));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["final_resolution"], 96);
}

#[test]
fn nearest_neighbour_tour_is_shorter_than_index_order_overall() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut tour, mut index, mut shorter) = (0.0, 0.0, 0);
    for _ in 0..50 {
        let n = rng.random_range(3..20);
        let cams: Vec<Camera> = (0..n)
            .map(|_| Camera::new(rng.random_range(0.0..360.0), rng.random_range(5.0..175.0), 1.2))
            .collect();
        let areas: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let order = order_views(&cams, &areas);
        let mut sorted = order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..n).collect::<Vec<_>>());
        let identity: Vec<usize> = (0..n).collect();
        let (a, b) = (tour_length(&cams, &order), tour_length(&cams, &identity));
        tour += a;
        index += b;
        shorter += usize::from(a <= b + 1e-12);
    }
    println!("nearest-neighbour tour no longer than index order on {shorter}/50 instances");
    assert!(tour < 0.6 * index, "{tour} vs {index}");
}

#[test]
fn nearest_neighbour_tour_can_lose_to_index_order() {
    // points at -20, 0, 10 and 30 degrees on the equator, starting from 0
    let cams = [340.0, 0.0, 10.0, 30.0].map(|az| Camera::new(az, 90.0, 1.2));
    let order = order_views(&cams, &[0.1, 1.0, 0.1, 0.1]);
    assert_eq!(order, vec![1, 2, 3, 0]);
    let nn = tour_length(&cams, &order).to_degrees();
    let index = tour_length(&cams, &[0, 1, 2, 3]).to_degrees();
    assert!((nn - 80.0).abs() < 1e-9 && (index - 50.0).abs() < 1e-9);
}

#[test]
fn three_views_follow_the_forced_order() {
    let cams = [Camera::new(0.0, 90.0, 1.2), Camera::new(10.0, 90.0, 1.2), Camera::new(180.0, 90.0, 1.2)];
    assert_eq!(order_views(&cams, &[5.0, 1.0, 1.0]), vec![0, 1, 2]);
}

#[test]
fn final_texture_renders_consistently_between_adjacent_views() {
    let mut cfg = small_config();
    cfg.pipeline.steps = 1;
    let p = pipeline(cfg);
    let texture = p.run().texture.unwrap();
    let (sel, order) = p.select_views().unwrap();
    let views = p.view_cameras(&sel, &order);
    let table = build_texel_table(p.mesh(), texture.resolution()).unwrap();
    for pair in views.windows(2).take(5) {
        let a = rasterize_with_table(p.mesh(), &texture, &table, &pair[0]);
        let b = rasterize_with_table(p.mesh(), &texture, &table, &pair[1]);
        // the same texel shows the same colour from every view
        for i in 0..a.texels().len() {
            if let Some(t) = a.texel(i) {
                assert_eq!(a.color.pixels()[i], texture.rgb()[t]);
            }
            if let Some(t) = b.texel(i) {
                assert_eq!(b.color.pixels()[i], texture.rgb()[t]);
            }
        }
    }
}
