use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use stflow::flow::FlowField;
use stflow::voxel::VoxelGrid;
use tempfile::TempDir;

fn stflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stflow")).args(args).output().expect("spawn stflow")
}

fn ok(args: &[&str]) -> String {
    let out = stflow(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

fn kv(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in {text}"))
        .parse()
        .unwrap()
}

/// synth → voxelize → infer → eval in `dir`.
fn pipeline(dir: &Path) -> String {
    let (ev, gt, f0, f1) = (p(dir, "ev.evt"), p(dir, "gt.flo"), p(dir, "f0.pfm"), p(dir, "f1.pfm"));
    ok(&["synth", "--width", "64", "--height", "64", "--velocity", "40,-20", "--substeps", "40", "--seed", "3"]
        .into_iter()
        .chain(["--events", &ev, "--flow", &gt, "--frame0", &f0, "--frame1", &f1])
        .collect::<Vec<_>>());
    let vox = p(dir, "v.vox");
    ok(&["voxelize", "--events", &ev, "--out", &vox, "--t-end", "100000000"]);
    let pred = p(dir, "pred.flo");
    ok(&["infer", "--voxels", &vox, "--weights", "random-seed-7", "--out", &pred]);
    ok(&["eval", "--pred", &pred, "--gt", &gt])
}

#[test]
fn pipeline_emits_finite_metrics() {
    let dir = TempDir::new().unwrap();
    let metrics = pipeline(dir.path());
    for key in ["epe", "ae", "1pe", "3pe", "l1"] {
        assert!(kv(&metrics, key).is_finite(), "{key}");
    }
    assert_eq!(kv(&metrics, "valid"), 64.0 * 64.0);
    let flow = FlowField::load(dir.path().join("pred.flo")).unwrap();
    assert_eq!((flow.width, flow.height), (64, 64));
}

#[test]
fn reruns_are_bit_identical() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    assert_eq!(pipeline(a.path()), pipeline(b.path()));
    for name in ["ev.evt", "gt.flo", "f0.pfm", "f1.pfm", "v.vox", "pred.flo"] {
        let read = |d: &TempDir| std::fs::read(d.path().join(name)).unwrap();
        assert_eq!(read(&a), read(&b), "{name} differs");
    }
}

#[test]
fn profile_reports_positive_gmac() {
    let table = ok(&["profile", "--height", "480", "--width", "640"]);
    let total = table.lines().find(|l| l.starts_with("total")).expect("total line");
    let macs: u64 = total.split_whitespace().last().unwrap().parse().unwrap();
    assert!(macs > 0);
    let gmac: f64 = table.lines().find_map(|l| l.strip_prefix("gmac ")).unwrap().parse().unwrap();
    assert!(gmac > 0.0 && (gmac - macs as f64 / 1e9).abs() < 1e-3);
    let kvs = ok(&["profile", "--height", "480", "--width", "640", "--format", "kv"]);
    assert!((kv(&kvs, "total.gmac") - gmac).abs() < 1e-3);
}

#[test]
fn still_scene_voxelizes_to_zero() {
    let dir = TempDir::new().unwrap();
    let (ev, gt, vox) = (p(dir.path(), "ev.evt"), p(dir.path(), "gt.flo"), p(dir.path(), "v.vox"));
    let out = ok(&["synth", "--width", "32", "--height", "32", "--velocity", "0,0", "--events", &ev, "--flow", &gt]);
    assert_eq!(out.trim(), "events=0");
    ok(&["voxelize", "--events", &ev, "--out", &vox, "--bins", "8"]);
    let g = VoxelGrid::load(&vox).unwrap();
    assert_eq!((g.bins, g.height, g.width), (8, 32, 32));
    assert!(g.data.iter().all(|&v| v == 0.0));
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# profile overrides\nheight = 64\nwidth=64\nbackend=attention\n").unwrap();
    let cfg = cfg.display().to_string();
    let out = stflow(&["profile", "--config", &cfg, "--backend", "lti-diagonal"]);
    assert!(out.status.success());
    let echo = String::from_utf8(out.stderr).unwrap();
    assert!(echo.contains("height=64\n") && echo.contains("backend=lti-diagonal\n"), "{echo}");
    let direct = ok(&["profile", "--height", "64", "--width", "64", "--backend", "lti-diagonal"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), direct);

    std::fs::write(dir.path().join("bad.cfg"), "heigth=64\n").unwrap();
    let out = stflow(&["profile", "--config", &p(dir.path(), "bad.cfg")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn errors_exit_nonzero_without_output() {
    assert_ne!(stflow(&["frobnicate"]).status.code(), Some(0));
    assert_ne!(stflow(&["profile", "--no-such-flag"]).status.code(), Some(0));
    assert_eq!(stflow(&["profile", "--backend", "rnn"]).status.code(), Some(1));
    assert_eq!(stflow(&["profile", "--dims", "1,2"]).status.code(), Some(2));

    let dir = TempDir::new().unwrap();
    let (ev, gt) = (p(dir.path(), "ev.evt"), p(dir.path(), "gt.flo"));
    ok(&["synth", "--width", "32", "--height", "32", "--velocity", "30,0", "--substeps", "20", "--events", &ev, "--flow", &gt]);
    let vox = dir.path().join("v.vox");
    let out = stflow(&["voxelize", "--events", &ev, "--out", &vox.display().to_string(), "--bins", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!vox.exists());

    let missing: PathBuf = dir.path().join("nope.evt");
    let out = stflow(&["voxelize", "--events", &missing.display().to_string(), "--out", &vox.display().to_string()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!vox.exists());
    let pred = dir.path().join("pred.flo");
    let out = stflow(&["infer", "--events", &ev, "--weights", "random-seed-x", "--out", &pred.display().to_string()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!pred.exists());
}

#[test]
fn saved_weights_match_seeded_weights() {
    let dir = TempDir::new().unwrap();
    let (ev, gt, w) = (p(dir.path(), "ev.evt"), p(dir.path(), "gt.flo"), p(dir.path(), "w.stwt"));
    ok(&["synth", "--width", "64", "--height", "64", "--velocity", "30,10", "--substeps", "20", "--events", &ev, "--flow", &gt]);
    let net = ["--backend", "lti-mimo", "--dims", "32,32,48,64", "--channels", "16,16,24,32"];
    ok(&[&["init-weights", "--out", &w, "--seed", "5", "--height", "64", "--width", "64"][..], &net].concat());
    let (a, b) = (p(dir.path(), "a.flo"), p(dir.path(), "b.flo"));
    let window = ["--t-end", "100000000"];
    ok(&[&["infer", "--events", &ev, "--weights", &w, "--out", &a][..], &net, &window].concat());
    ok(&[&["infer", "--events", &ev, "--weights", "random-seed-5", "--out", &b][..], &net, &window].concat());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let c = p(dir.path(), "c.flo");
    ok(&[&["infer", "--events", &ev, "--weights", &w, "--out", &c, "--precision", "64"][..], &net, &window].concat());
    let (fa, fc) = (FlowField::load(&a).unwrap(), FlowField::load(&c).unwrap());
    let gap = fa.u.iter().zip(&fc.u).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max);
    let scale = fc.u.iter().fold(0.0f32, |m, v| m.max(v.abs())).max(1e-6);
    assert!(gap / scale < 1e-3, "32 vs 64-bit gap {gap}");

    let out = stflow(&[&["infer", "--events", &ev, "--weights", &w, "--out", &c][..], &window].concat());
    assert_eq!(out.status.code(), Some(1), "default network must reject mismatched weights");
}

#[test]
fn lk_and_viz() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let (ev, gt, f0, f1) = (p(d, "ev.evt"), p(d, "gt.flo"), p(d, "f0.pfm"), p(d, "f1.pfm"));
    ok(&["synth", "--width", "64", "--height", "64", "--velocity", "10,0", "--substeps", "10"]
        .into_iter()
        .chain(["--events", &ev, "--flow", &gt, "--frame0", &f0, "--frame1", &f1])
        .collect::<Vec<_>>());
    let lk = p(d, "lk.flo");
    let out = ok(&["lk", "--frame0", &f0, "--frame1", &f1, "--out", &lk, "--radius", "5"]);
    assert!(kv(&out, "valid") > 0.0);
    let m = ok(&["eval", "--pred", &lk, "--gt", &gt, "--n", "1"]);
    assert!(kv(&m, "epe") < 0.5, "{m}");

    let ppm = p(d, "gt.ppm");
    ok(&["viz", "--flow", &gt, "--out", &ppm]);
    let bytes = std::fs::read(&ppm).unwrap();
    let header = b"P6\n64 64\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    assert_eq!(bytes.len(), header.len() + 64 * 64 * 3);
}
