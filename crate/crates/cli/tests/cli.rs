use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hsiseg::hsi::{load_cube, load_labels, write_cube, write_labels, HsiCube};
use serde_json::Value;
use tempfile::TempDir;

fn hsiseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hsiseg")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn ok(args: &[&str]) -> Output {
    let out = hsiseg(args);
    assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A 16×16×8 three-class scene and a small-model config.
fn fixture() -> (TempDir, PathBuf, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cube = dir.path().join("scene.hsic");
    ok(&["synth", "--out", s(&cube), "--width", "16", "--height", "16", "--bands", "8", "--classes", "3", "--seed", "2"]);
    let config = dir.path().join("run.json");
    fs::write(
        &config,
        r#"{"clusters": 3, "kernel_depth": 3, "kernels_per_layer": 8, "lr": 0.001,
            "batch_size": 16, "max_stage1_epochs": 4, "stage2_epochs": 3, "seed": 1}"#,
    )
    .unwrap();
    let truth = dir.path().join("scene.gt");
    (dir, cube, truth, config)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn train_segment_evaluate() {
    let (dir, cube, truth, config) = fixture();
    let run = dir.path().join("run");
    ok(&["train", "--config", s(&config), "--cube", s(&cube), "--truth", s(&truth), "--out-dir", s(&run), "--ppm"]);
    for f in ["model.ckpt", "pipeline.json", "report.json", "timing.json", "map.gt", "map.u16", "map.ppm"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let report = json(&run.join("report.json"));
    assert!(report["training"]["stage2_losses"].as_array().unwrap().len() <= 25);
    assert_eq!(report["config"]["clusters"], 3);
    assert_eq!(json(&run.join("timing.json"))["config"]["seed"], 1);

    let map = dir.path().join("seg.gt");
    let ppm = dir.path().join("seg.ppm");
    ok(&["segment", "--checkpoint", s(&run.join("model.ckpt")), "--cube", s(&cube), "--out", s(&map), "--ppm", s(&ppm)]);
    let raster = load_labels(&map).unwrap();
    assert_eq!((raster.width, raster.height), (16, 16));
    assert_eq!(fs::read(&map.with_extension("u16")).unwrap(), fs::read(run.join("map.u16")).unwrap());
    assert_eq!(fs::read(&ppm).unwrap(), fs::read(run.join("map.ppm")).unwrap());

    let out = ok(&["evaluate", "--map", s(&truth), "--truth", s(&truth)]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["metrics"]["nmi"], 1.0);
    assert_eq!(v["metrics"]["ars"], 1.0);
    assert!(v["truth"].as_str().unwrap().ends_with("scene.gt"));
}

#[test]
fn error_exit_codes() {
    let (dir, cube, truth, config) = fixture();
    let out = dir.path().join("out");
    // I/O
    let missing = hsiseg(&["train", "--config", s(&config), "--cube", "/nonexistent/cube.hsic", "--out-dir", s(&out)]);
    assert_eq!(code(&missing), 2);
    assert!(String::from_utf8_lossy(&missing.stderr).contains("io"));
    // Contract / configuration
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"clusters": 3, "alpha": 1.5}"#).unwrap();
    assert_eq!(code(&hsiseg(&["train", "--config", s(&bad), "--cube", s(&cube), "--out-dir", s(&out)])), 1);
    fs::write(&bad, r#"{"clusterz": 3}"#).unwrap();
    assert_eq!(code(&hsiseg(&["train", "--config", s(&bad), "--cube", s(&cube), "--out-dir", s(&out)])), 1);
    assert_eq!(code(&hsiseg(&["train", "--bogus"])), 1);

    let empty = dir.path().join("empty.gt");
    write_labels(&empty, 16, 16, &[0; 256]).unwrap();
    assert_eq!(code(&hsiseg(&["evaluate", "--map", s(&truth), "--truth", s(&empty)])), 1);
    let small = dir.path().join("small.gt");
    write_labels(&small, 4, 4, &[1; 16]).unwrap();
    assert_eq!(code(&hsiseg(&["evaluate", "--map", s(&truth), "--truth", s(&small)])), 1);

    // Numerical: a uniform scene embeds to one point, too few for three centers.
    let flat = dir.path().join("flat.hsic");
    write_cube(&HsiCube::new(8, 8, 8, vec![0.25; 512]).unwrap(), &flat).unwrap();
    let degenerate = hsiseg(&["train", "--config", s(&config), "--cube", s(&flat), "--out-dir", s(&out)]);
    assert_eq!(code(&degenerate), 3, "{}", String::from_utf8_lossy(&degenerate.stderr));
}

#[test]
fn segment_rejects_band_mismatch() {
    let (dir, cube, truth, config) = fixture();
    let run = dir.path().join("run");
    ok(&["train", "--config", s(&config), "--cube", s(&cube), "--truth", s(&truth), "--out-dir", s(&run)]);
    let other = dir.path().join("other.hsic");
    ok(&["synth", "--out", s(&other), "--width", "16", "--height", "16", "--bands", "12"]);
    let out = hsiseg(&["segment", "--checkpoint", s(&run.join("model.ckpt")), "--cube", s(&other), "--out", s(&dir.path().join("x.gt"))]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bands"));
}

#[test]
fn baselines() {
    let dir = tempfile::tempdir().unwrap();
    let cube = dir.path().join("blobs.hsic");
    ok(&["synth", "--out", s(&cube), "--width", "20", "--height", "21", "--bands", "10", "--classes", "3", "--seed", "7"]);
    let truth = dir.path().join("blobs.gt");
    let km = dir.path().join("km");
    let out = ok(&["baseline", "--method", "kmeans", "--cube", s(&cube), "--truth", s(&truth), "--clusters", "3", "--seed", "1", "--out-dir", s(&km)]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["metrics"]["ars"].as_f64().unwrap() >= 0.95);
    assert!(json(&km.join("timing.json"))["seconds"]["clustering"].is_number());

    let gmm = dir.path().join("gmm");
    ok(&["baseline", "--method", "gmm", "--cube", s(&cube), "--clusters", "1", "--out-dir", s(&gmm)]);
    let map = load_labels(gmm.join("map.gt")).unwrap();
    assert!(map.labels.iter().all(|&l| l == 1));

    let wide = dir.path().join("wide.hsic");
    ok(&["synth", "--out", s(&wide), "--width", "10", "--height", "10", "--bands", "100", "--classes", "2"]);
    let sm = dir.path().join("sm");
    let out = ok(&["baseline", "--method", "kmeans", "--cube", s(&wide), "--reduction", "smsi", "--clusters", "2", "--out-dir", s(&sm)]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["model_bands"], 25);
}

#[test]
fn reduce_and_convert() {
    let dir = tempfile::tempdir().unwrap();
    let wide = dir.path().join("wide.hsic");
    ok(&["synth", "--out", s(&wide), "--width", "6", "--height", "6", "--bands", "100", "--classes", "2"]);
    let reduced = dir.path().join("reduced.hsic");
    ok(&["reduce", "--cube", s(&wide), "--reduction", "smsi", "--bands", "25", "--out", s(&reduced)]);
    assert_eq!(load_cube(&reduced).unwrap().bands(), 25);
    let pca = dir.path().join("pca.hsic");
    ok(&["reduce", "--cube", s(&wide), "--reduction", "pca", "--bands", "3", "--out", s(&pca)]);
    assert_eq!(load_cube(&pca).unwrap().bands(), 3);

    // 3×2 pixels, 2 bands, big-endian u16, band-interleaved by line, 4-byte preamble.
    let (w, h, b) = (3usize, 2usize, 2usize);
    let value = |x: usize, y: usize, band: usize| (100 * band + 10 * y + x) as u16;
    let mut bytes = vec![0xAB; 4];
    for y in 0..h {
        for band in 0..b {
            for x in 0..w {
                bytes.extend_from_slice(&value(x, y, band).to_be_bytes());
            }
        }
    }
    let raw = dir.path().join("scene.raw");
    fs::write(&raw, &bytes).unwrap();
    let out = dir.path().join("converted.hsic");
    ok(&[
        "convert", "--raw", s(&raw), "--width", "3", "--height", "2", "--bands", "2", "--interleave", "bil",
        "--dtype", "u16", "--byte-order", "big", "--offset", "4", "--out", s(&out),
    ]);
    let cube = load_cube(&out).unwrap();
    for y in 0..h {
        for x in 0..w {
            for band in 0..b {
                assert_eq!(cube.value(x, y, band), f64::from(value(x, y, band)));
            }
        }
    }
    fs::write(&raw, &bytes[..bytes.len() - 1]).unwrap();
    let short = hsiseg(&[
        "convert", "--raw", s(&raw), "--width", "3", "--height", "2", "--bands", "2", "--interleave", "bil",
        "--dtype", "u16", "--offset", "4", "--out", s(&out),
    ]);
    assert_eq!(code(&short), 2);
}
