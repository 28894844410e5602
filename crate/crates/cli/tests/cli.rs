use std::path::Path;
use std::process::{Command, Output};

use texopt_core::ColorImage;

fn texopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_texopt"))
        .args(args)
        .env_remove("TEXOPT_DENOISER_URL")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn fixture(dir: &Path, shape: &str) {
    let out = texopt(&["make-fixture", "--shape", shape, "--out-dir", dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Fast overrides: fewer candidates and smaller renders.
const QUICK: [&str; 4] = ["--override", "viewselect.candidates=1024", "--override", "render_size=256"];

#[test]
fn select_views_covers_the_icosphere() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), "icosphere");
    let report = dir.path().join("views.json");
    let out = texopt(&[
        "select-views",
        dir.path().join("icosphere.obj").to_str().unwrap(),
        "--candidates",
        "8192",
        "--out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r = read_json(&report);
    assert!(r["coverage_area_fraction"].as_f64().unwrap() >= 0.999);
    assert!(r["wall_clock_ms"].as_f64().unwrap() > 0.0);
    let views = r["selected"].as_array().unwrap();
    assert!(!views.is_empty());
    let first = &views[0];
    for key in ["azimuth_deg", "elevation_deg", "radius", "visible_faces", "new_faces"] {
        assert!(!first[key].is_null(), "{key}");
    }
    let new_faces: u64 = views.iter().map(|v| v["new_faces"].as_u64().unwrap()).sum();
    assert_eq!(new_faces, r["covered_faces"].as_u64().unwrap());
}

#[test]
fn select_views_rejects_bad_input() {
    let out = texopt(&["select-views", "/nonexistent/ball.obj"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("/nonexistent/ball.obj"), "{}", stderr(&out));

    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), "cube");
    let out = texopt(&["select-views", dir.path().join("cube.obj").to_str().unwrap(), "--candidates", "0"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("candidates"), "{}", stderr(&out));
}

#[test]
fn oracle_run_writes_all_outputs_at_full_resolution() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), "icosphere");
    let out_dir = dir.path().join("out");
    let config = dir.path().join("config.toml");
    let mut args = vec!["run", config.to_str().unwrap(), "--out-dir", out_dir.to_str().unwrap()];
    args.extend(QUICK);
    let out = texopt(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let texture = ColorImage::load_png(out_dir.join("texture.png")).unwrap();
    assert_eq!(texture.dims(), (1552, 1552));
    for k in 0..4 {
        assert!(out_dir.join(format!("preview_{k}.png")).is_file());
    }
    assert!(out_dir.join("mesh.obj").is_file() && out_dir.join("mesh.mtl").is_file());
    let report = read_json(&out_dir.join("report.json"));
    assert_eq!(report["steps"].as_array().unwrap().len(), 5);
    assert!(report["error"].is_null());
}

#[test]
fn single_step_override_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), "icosphere");
    let out_dir = dir.path().join("out");
    let config = dir.path().join("config.toml");
    let out = texopt(&[
        "run",
        config.to_str().unwrap(),
        "--denoiser",
        "procedural",
        "--override",
        "pipeline.N=1",
        QUICK[0],
        QUICK[1],
        QUICK[2],
        QUICK[3],
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = read_json(&out_dir.join("report.json"));
    assert_eq!(report["steps"].as_array().unwrap().len(), 1);
    assert_eq!(report["config"]["denoiser"], "procedural");
    assert_eq!(ColorImage::load_png(out_dir.join("texture.png")).unwrap().dims(), (307, 307));
}

#[test]
fn dead_endpoint_exits_3_with_partial_report() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), "cube");
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let endpoint = format!("remote.endpoint=\"http://127.0.0.1:{port}/generate\"");
    let out_dir = dir.path().join("out");
    let out = texopt(&[
        "run",
        dir.path().join("config.toml").to_str().unwrap(),
        "--denoiser",
        "remote",
        "--override",
        &endpoint,
        "--override",
        "remote.retries=2",
        "--override",
        "remote.backoff_ms=1",
        QUICK[0],
        QUICK[1],
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("3 attempts"), "{}", stderr(&out));
    assert!(!out_dir.join("texture.png").exists());
    let report = read_json(&out_dir.join("report.json"));
    assert_eq!(report["error"]["kind"], "denoiser");
    assert_eq!(report["phases_completed"], serde_json::json!(["load", "view_selection"]));
}

#[test]
fn run_exit_codes_follow_the_failure_class() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), "cube");
    let config = dir.path().join("config.toml");
    let config = config.to_str().unwrap();
    let out_dir = dir.path().join("out");
    let out_dir = out_dir.to_str().unwrap();

    let missing = texopt(&["run", "/nonexistent/config.toml", "--out-dir", out_dir]);
    assert_eq!(code(&missing), 2);

    for bad in ["pipeline.N=0", "render_size=2", "viewselect.candidates=0", "no_such_key=1"] {
        let out = texopt(&["run", config, "--override", bad, "--out-dir", out_dir]);
        assert_eq!(code(&out), 2, "{bad}: {}", stderr(&out));
    }

    let out = texopt(&["run", config, "--denoiser", "telepathy", "--out-dir", out_dir]);
    assert_eq!(code(&out), 2);

    let out = texopt(&["run", config, "--override", "mesh=\"gone.obj\"", "--out-dir", out_dir]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    assert!(stderr(&out).contains("gone.obj"));
}

fn solid_png(path: &Path, size: u32, rgb: [f32; 3]) {
    ColorImage::filled(size, size, rgb).save_png(path).unwrap();
}

#[test]
fn render_front_and_back_of_a_quad() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), "quad");
    let mesh = dir.path().join("quad.obj");
    let texture = dir.path().join("red.png");
    solid_png(&texture, 16, [1.0, 0.0, 0.0]);
    let render = |elevation: &str, out: &Path| {
        texopt(&[
            "render",
            mesh.to_str().unwrap(),
            texture.to_str().unwrap(),
            "--azimuth",
            "270",
            "--elevation",
            elevation,
            "--size",
            "64",
            "--out",
            out.to_str().unwrap(),
        ])
    };

    let front = dir.path().join("front.png");
    assert_eq!(code(&render("1", &front)), 0);
    let img = ColorImage::load_png(&front).unwrap();
    let red = img.pixels().iter().filter(|p| **p == [1.0, 0.0, 0.0]).count();
    let background = img.pixels().iter().filter(|p| **p == [0.0, 0.0, 0.0]).count();
    assert_eq!(red + background, img.pixels().len());
    assert!(red > img.pixels().len() / 2);

    let back = dir.path().join("back.png");
    assert_eq!(code(&render("179", &back)), 0);
    let img = ColorImage::load_png(&back).unwrap();
    let background = img.pixels().iter().filter(|p| **p == [0.0, 0.0, 0.0]).count();
    assert!(background > img.pixels().len() * 9 / 10);

    let again = dir.path().join("again.png");
    assert_eq!(code(&render("1", &again)), 0);
    assert_eq!(std::fs::read(&front).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn render_rejects_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), "quad");
    let mesh = dir.path().join("quad.obj");
    let wide = dir.path().join("wide.png");
    ColorImage::filled(8, 4, [0.5; 3]).save_png(&wide).unwrap();
    let args = |mesh: &str, tex: &str| {
        texopt(&["render", mesh, tex, "--azimuth", "0", "--elevation", "45", "--out", "/tmp/unused.png"])
    };
    assert_eq!(code(&args(mesh.to_str().unwrap(), wide.to_str().unwrap())), 2);
    assert_eq!(code(&args(mesh.to_str().unwrap(), "/nonexistent.png")), 2);
    assert_eq!(code(&args("/nonexistent.obj", wide.to_str().unwrap())), 2);
}

#[test]
fn inspect_schedule_dumps_the_plan() {
    let out = texopt(&["inspect-schedule"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let res: Vec<u64> = v["plan"]["entries"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["resolution"].as_u64().unwrap())
        .collect();
    assert_eq!(res, vec![307, 460, 690, 1035, 1552]);
    assert_eq!(v["alpha_bars"].as_array().unwrap().len(), 1000);

    let out = texopt(&["inspect-schedule", "--override", "pipeline.N=2"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["plan"]["entries"].as_array().unwrap().len(), 2);

    let out = texopt(&["inspect-schedule", "--override", "pipeline.upsample_factor=0.5"]);
    assert_eq!(code(&out), 2);
}
