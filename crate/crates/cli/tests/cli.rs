use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use efps_core::io::{decode_png, read_obs1, write_nrm1, NormalMap};
use nalgebra::Vector3;

fn efps(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_efps"))
        .args(args)
        .env_remove("EFPS_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = efps(args);
    assert!(
        out.status.success(),
        "efps {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A 32 x 32 dataset and its `m = 16` observation file.
fn dataset(root: &Path, scene: &str, seed: &str) -> (PathBuf, PathBuf) {
    let data = root.join(format!("{scene}{seed}"));
    ok(&[
        "gen-data", "--scene", scene, "--frames", "16", "--width", "32", "--height", "32", "--seed", seed,
        "--out", s(&data),
    ]);
    let obs = root.join(format!("{scene}{seed}.obs1"));
    ok(&["obsmap", "--data", s(&data), "--m", "16", "--out", s(&obs)]);
    (data, obs)
}

fn quick_train(obs: &Path, ckpt: &Path, extra: &[&str]) {
    let mut args = vec![
        "--threads", "1", "train", "--obs", s(obs), "--out", s(ckpt), "--epochs", "1", "--set",
        "train_pixels=32", "--set", "batch_size=16",
    ];
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn gen_data_writes_every_frame_deterministically() {
    let root = tempfile::tempdir().unwrap();
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    for dir in [&a, &b] {
        ok(&["gen-data", "--scene", "sphere", "--frames", "64", "--width", "24", "--height", "24", "--seed", "4",
             "--out", s(dir)]);
    }
    let pngs = fs::read_dir(a.join("frames"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png"))
        .count();
    assert_eq!(pngs, 64);
    for f in ["events.evt1", "lights.csv", "normals.nrm1", "mask.png", "manifest.txt"] {
        assert!(a.join(f).exists(), "{f} missing");
    }
    assert_eq!(fs::read(a.join("events.evt1")).unwrap(), fs::read(b.join("events.evt1")).unwrap());
}

#[test]
fn usage_errors_exit_with_one_line() {
    let root = tempfile::tempdir().unwrap();
    let out = efps(&["gen-data", "--scene", "sphere", "--frames", "1", "--out", s(&root.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(!root.path().join("x").exists());

    let out = efps(&["gen-data", "--scene", "teapot", "--out", s(&root.path().join("y"))]);
    assert_eq!(out.status.code(), Some(2));

    let out = efps(&["obsmap", "--data", s(&root.path().join("missing")), "--out", s(&root.path().join("o.obs1"))]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(String::from_utf8(out.stderr).unwrap().trim_end().lines().count(), 1);
}

#[test]
fn obsmap_covers_the_mask() {
    let root = tempfile::tempdir().unwrap();
    let (data, obs) = dataset(root.path(), "blob", "2");
    let mask = efps_core::io::load_mask_png(&data.join("mask.png")).unwrap();
    let bytes = fs::read(&obs).unwrap();
    assert_eq!(&bytes[..4], b"OBS1");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize, mask.count());
    let (m, samples) = read_obs1(&mut bytes.as_slice()).unwrap();
    assert_eq!(m, 16);
    for sample in samples.iter().take(100) {
        assert_eq!(sample.normalized.max(), 1.0);
    }
    assert!(obs.with_extension("nrm1").exists());

    let wide = root.path().join("wide.obs1");
    ok(&["obsmap", "--data", s(&data), "--m", "32", "--out", s(&wide)]);
    let (m, _) = read_obs1(&mut fs::read(&wide).unwrap().as_slice()).unwrap();
    assert_eq!(m, 32);
}

#[test]
fn train_eval_render_round() {
    let root = tempfile::tempdir().unwrap();
    let (_, obs) = dataset(root.path(), "sphere", "1");
    let ckpt = root.path().join("net.ckpt");
    quick_train(&obs, &ckpt, &[]);
    let log = fs::read_to_string(root.path().join("net.loss.csv")).unwrap();
    assert!(log.starts_with("epoch,step,lr,l_e,l_n,total\n"));
    assert!(log.lines().count() > 1);

    let report = root.path().join("report.csv");
    let preds = root.path().join("pred");
    let table = ok(&["eval", "--obs", s(&obs), "--ckpt", s(&ckpt), "--report", s(&report), "--pred-dir", s(&preds)]);
    assert!(table.contains("average"));
    let csv = fs::read_to_string(&report).unwrap();
    assert!(csv.starts_with("object,pixels,mae_deg\nsphere1,"));
    assert!(report.with_extension("txt").exists());

    // the network's own predictions as ground truth score zero
    let pred = preds.join("sphere1.pred.nrm1");
    let twin = root.path().join("twin.obs1");
    fs::copy(&obs, &twin).unwrap();
    fs::copy(&pred, twin.with_extension("nrm1")).unwrap();
    let table = ok(&["eval", "--obs", s(&twin), "--ckpt", s(&ckpt)]);
    let avg = table.lines().find(|l| l.starts_with("average")).unwrap();
    assert!(avg.trim_end().ends_with("0.00"), "{table}");

    let png = root.path().join("normals.png");
    let text = ok(&["render-normals", "--pred", s(&pred), "--gt", s(&obs.with_extension("nrm1")), "--out-png", s(&png)]);
    assert!(text.contains("mean angular error"));
    let img = decode_png(&fs::read(&png).unwrap()).unwrap();
    assert_eq!((img.width, img.height, img.channels), (32, 32, 3));
    assert!(root.path().join("normals_error.png").exists());
}

#[test]
fn error_map_endpoints() {
    let root = tempfile::tempdir().unwrap();
    let tilt = 60f64.to_radians();
    let write = |name: &str, normals: Vec<Vector3<f64>>| {
        let map = NormalMap { width: 2, height: 1, pixels: vec![(0, 0), (1, 0)], normals };
        let mut bytes = Vec::new();
        write_nrm1(&mut bytes, &map).unwrap();
        let p = root.path().join(name);
        fs::write(&p, bytes).unwrap();
        p
    };
    let truth = write("gt.nrm1", vec![Vector3::z(), Vector3::z()]);
    let pred = write("pred.nrm1", vec![Vector3::z(), Vector3::new(tilt.sin(), 0.0, tilt.cos())]);
    let err = root.path().join("err.png");
    ok(&["render-normals", "--pred", s(&pred), "--gt", s(&truth), "--out-png", s(&root.path().join("n.png")),
         "--error-png", s(&err)]);
    let img = decode_png(&fs::read(&err).unwrap()).unwrap();
    assert_eq!(img.to_u8(), vec![0, 0, 255, 255, 0, 0]);
}

#[test]
fn single_thread_runs_reproduce() {
    let root = tempfile::tempdir().unwrap();
    let (_, obs) = dataset(root.path(), "ramp", "3");
    let (a, b) = (root.path().join("a.ckpt"), root.path().join("b.ckpt"));
    quick_train(&obs, &a, &["--seed", "5"]);
    quick_train(&obs, &b, &["--seed", "5"]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let manifest = fs::read_to_string(root.path().join("a.ckpt.manifest")).unwrap();
    assert!(manifest.contains("seed = 5"));
}

#[test]
fn no_event_ablation_trains_and_scores() {
    let root = tempfile::tempdir().unwrap();
    let (_, obs) = dataset(root.path(), "sphere", "6");
    let ckpt = root.path().join("plain.ckpt");
    quick_train(&obs, &ckpt, &["--ablation", "no_event"]);
    let table = ok(&["eval", "--obs", s(&obs), "--ckpt", s(&ckpt)]);
    assert!(table.contains("sphere6"));
}

#[test]
fn resolution_mismatch_is_refused() {
    let root = tempfile::tempdir().unwrap();
    let (_, obs) = dataset(root.path(), "sphere", "7");
    let out = efps(&["train", "--obs", s(&obs), "--out", s(&root.path().join("x.ckpt")), "--set", "m=32"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("m = 32") && err.contains("m = 16"), "{err}");
    assert!(!root.path().join("x.ckpt").exists());
}

#[test]
fn calibration_undistort_and_transfer() {
    let root = tempfile::tempdir().unwrap();
    let calib = root.path().join("calib.txt");
    fs::write(
        &calib,
        "fx = 600\nfy = 600\ncx = 256\ncy = 256\nk1 = -0.1\n\
         p_rgb = 600 0 256 0, 0 600 256 0, 0 0 1 500\np_e = 600 0 256 0, 0 600 256 0, 0 0 1 500\n",
    )
    .unwrap();
    let points = root.path().join("pts.csv");
    fs::write(&points, "100,200\n256,256\n").unwrap();
    let moved = ok(&["calib", "undistort", "--calib", s(&calib), "--points", s(&points)]);
    let moved_path = root.path().join("moved.csv");
    fs::write(&moved_path, &moved).unwrap();
    let back = ok(&["calib", "undistort", "--calib", s(&calib), "--points", s(&moved_path), "--invert"]);
    let parse = |t: &str| -> Vec<f64> { t.split([',', '\n']).filter(|v| !v.is_empty()).map(|v| v.parse().unwrap()).collect() };
    for (a, b) in parse(&back).iter().zip(parse("100,200\n256,256\n")) {
        assert!((a - b).abs() < 1e-3);
    }
    let same = ok(&["calib", "transfer", "--calib", s(&calib), "--points", s(&points)]);
    for (a, b) in parse(&same).iter().zip(parse("100,200\n256,256\n")) {
        assert!((a - b).abs() < 1e-9);
    }
}
