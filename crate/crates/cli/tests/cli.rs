use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spinesurf::io::read_pfm;

const SMALL_CFG: &str = r#"
[geometry]
n_rays = 16
n_samples = 16

[phantom.plan]
n_sweeps = 2
sweep_angles_rad = [-0.1, 0.1]
frames_per_sweep = 3

[features.log_gabor]
n_scales = 2

[net]
base_channels = 2

[train]
epochs = 2

[eval.benchmark.net]
base_channels = 2

[eval.benchmark.train]
epochs = 1
"#;

const ONE_ROW_GRID: &str = r#"
[[experiment]]
experiment_id = "exp4"
loss = "w_dice"
network = "rnn"
test_split = "unseen_image"
input_channels = "bmode_plus_feature"

[experiment.reset]
kind = "align_with_scan"
"#;

fn spinesurf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spinesurf"))
        .args(args)
        .env_remove("SPINESURF_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = spinesurf(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(out.stdout.is_empty(), "{args:?} wrote to stdout");
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = spinesurf(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).to_lowercase().contains("usage"));
    assert!(out.stdout.is_empty());
}

#[test]
fn missing_required_flag_is_a_usage_error() {
    assert_eq!(spinesurf(&["render", "--frame", "x.pfm"]).status.code(), Some(2));
    assert_eq!(spinesurf(&["eval", "--grid", "g.toml", "--out", "r.csv"]).status.code(), Some(2));
    assert_eq!(spinesurf(&["reconstruct", "--frames", "a", "--maps", "b", "--mode", "median", "--out", "v.nrrd"]).status.code(), Some(2));
}

#[test]
fn domain_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.pfm");
    let out = spinesurf(&["render", "--frame", s(&missing), "--out", s(&tmp.path().join("o.pgm"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());

    let bad = tmp.path().join("bad.cfg");
    fs::write(&bad, "[geometry]\nn_rayz = 3\n").unwrap();
    let out = spinesurf(&["simulate", "--spec", s(&bad), "--out", s(&tmp.path().join("sim"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_rayz"));
    assert!(!tmp.path().join("sim").exists());
}

#[test]
fn invalid_thread_cap_is_a_usage_error() {
    let out = Command::new(env!("CARGO_BIN_EXE_spinesurf"))
        .args(["render", "--frame", "x.pfm", "--out", "o.pgm"])
        .env("SPINESURF_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

struct Pipeline {
    _tmp: tempfile::TempDir,
    root: PathBuf,
}

impl Pipeline {
    fn p(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

fn run_pipeline() -> Pipeline {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_path_buf();
    let pl = Pipeline { _tmp: tmp, root };
    let cfg = pl.p("small.cfg");
    fs::write(&cfg, SMALL_CFG).unwrap();
    fs::write(pl.p("grid.toml"), ONE_ROW_GRID).unwrap();
    let c = s(&cfg);
    let sim = pl.p("sim");
    ok(&["simulate", "--spec", c, "--out", s(&sim)]);
    ok(&["features", "--input", s(&sim), "--output", s(&pl.p("feat")), "--params", c]);
    let mesh = sim.join("mesh.ply");
    ok(&["label", "--mesh", s(&mesh), "--frames", s(&sim), "--annotations", s(&mesh), "--out", s(&pl.p("lab")), "--config", c]);
    let weights = pl.p("model/weights.bin");
    ok(&["train", "--frames", s(&sim), "--labels", s(&pl.p("lab")), "--features", s(&pl.p("feat")), "--config", c, "--out", s(&weights)]);
    ok(&["infer", "--frames", s(&sim), "--weights", s(&weights), "--features", s(&pl.p("feat")), "--config", c, "--out", s(&pl.p("pred"))]);
    ok(&["reconstruct", "--frames", s(&sim), "--maps", s(&pl.p("pred")), "--config", c, "--threshold", "0.3", "--out", s(&pl.p("vol/volume.nrrd"))]);
    ok(&["eval", "--grid", s(&pl.p("grid.toml")), "--data", s(&sim), "--config", c, "--out", s(&pl.p("results.csv"))]);
    ok(&[
        "render",
        "--frame", s(&sim.join("frame_000000.pfm")),
        "--label", s(&pl.p("lab/label_000000.pfm")),
        "--pred", s(&pl.p("pred/pred_000000.pfm")),
        "--out", s(&pl.p("overlay.pgm")),
    ]);
    pl
}

#[test]
fn pipeline_smoke_produces_every_artifact() {
    let pl = run_pipeline();
    let nrrd = fs::read_to_string(pl.p("vol/volume.nrrd")).unwrap();
    assert!(nrrd.starts_with("NRRD"));
    assert!(pl.p("vol/surface.ply").exists());
    assert!(pl.p("feat/features.toml").exists());
    assert!(pl.p("lab/registration.txt").exists());
    assert!(pl.p("model/weights.bin.loss.csv").exists());
    let pred = read_pfm(&pl.p("pred/pred_000005.pfm")).unwrap();
    assert_eq!((pred.rows(), pred.cols()), (16, 16));
    assert!(pred.data().iter().all(|v| (0.0..=1.0).contains(v)));
    let csv = fs::read_to_string(pl.p("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().starts_with("exp4,"));

    let pgm = fs::read(pl.p("overlay.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n16 16\n255\n"));
    assert_eq!(pgm.len(), b"P5\n16 16\n255\n".len() + 256);
}

#[test]
fn demo_config_rejects_stray_keys_with_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("demo.cfg");
    let mut text = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/demo.cfg")).unwrap();
    text.push_str("\n[extra]\nx = 1\n");
    fs::write(&cfg, text).unwrap();
    let out = spinesurf(&["demo", "--config", s(&cfg), "--out", s(&tmp.path().join("d"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bundled_demo_report_is_complete_and_learns() {
    let cfg = spinesurf_cli::RunConfig::parse(include_str!("../demo.cfg"), "demo.cfg").unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let report = spinesurf_cli::demo_end_to_end(&cfg, tmp.path()).unwrap();
    assert!(report.is_finite(), "{}", report.to_text());
    // pilot on the bundled seed: 0.962
    assert!(report.test_w_dice >= 0.35, "{}", report.to_text());
    let text = fs::read_to_string(tmp.path().join("report.txt")).unwrap();
    assert_eq!(text, report.to_text());
    for f in ["volume.nrrd", "volume.raw", "surface.ply"] {
        assert!(tmp.path().join(f).exists(), "{f}");
    }
}
