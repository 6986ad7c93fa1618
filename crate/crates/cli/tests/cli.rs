use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_plenoctree")).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn resolved(out: &Output) -> Value {
    let err = String::from_utf8_lossy(&out.stderr);
    let line = err.lines().find_map(|l| l.strip_prefix("resolved config: ")).expect("resolved config printed");
    serde_json::from_str(line).unwrap()
}

fn small_dataset(dir: &Path, name: &str) {
    ok(dir, &["gen", "--scene", "voxel_blocks", "--views", "6", "--test-views", "2", "--res", "24", "--samples", "0", "--out", name]);
}

#[test]
fn generation_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["gen", "--scene", "sh_sphere", "--views", "3", "--res", "16", "--samples", "32", "--out", "a"]);
    ok(tmp.path(), &["gen", "--scene", "sh_sphere", "--views", "3", "--res", "16", "--samples", "32", "--out", "b"]);
    for f in ["manifest.json", "scene.json", "images/0000.png", "images/0002.png"] {
        assert_eq!(fs::read(tmp.path().join("a").join(f)).unwrap(), fs::read(tmp.path().join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn pipeline_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_dataset(d, "ds");
    let conv = ok(d, &["--deterministic", "--seed", "4", "convert", "--dataset", "ds", "--grid", "128", "--auto-bbox", "false", "--samples-per-voxel", "4", "--out", "t.ploc"]);
    assert!(json(&conv)["leaves"].as_u64().unwrap() > 0);
    ok(d, &["--deterministic", "--seed", "4", "convert", "--dataset", "ds", "--grid", "128", "--auto-bbox", "false", "--samples-per-voxel", "4", "--out", "t2.ploc"]);
    assert_eq!(fs::read(d.join("t.ploc")).unwrap(), fs::read(d.join("t2.ploc")).unwrap());

    let direct = json(&ok(d, &["render", "--tree", "t.ploc", "--dataset", "ds", "--gamma", "0", "--out", "r1"]));
    assert!(direct["mean_psnr"].as_f64().unwrap() > 40.0, "{direct}");

    ok(d, &["compress", "--input", "t.ploc", "--out", "t.plocz"]);
    ok(d, &["decompress", "--input", "t.plocz", "--out", "back.ploc"]);
    ok(d, &["render", "--tree", "t.ploc", "--views", "2", "--res", "32", "--out", "a"]);
    ok(d, &["render", "--tree", "back.ploc", "--views", "2", "--res", "32", "--out", "b", "--aux"]);
    assert!(d.join("b/0001_alpha.png").exists() && d.join("b/0001_depth.f32").exists());
    let load = |p: &str| image::open(d.join(p)).unwrap().to_rgb8().into_raw();
    let (a, b) = (load("a/0000.png"), load("b/0000.png"));
    let mse = a.iter().zip(&b).map(|(x, y)| ((*x as f64 - *y as f64) / 255.0).powi(2)).sum::<f64>() / a.len() as f64;
    assert!(mse == 0.0 || 10.0 * (1.0 / mse).log10() >= 35.0);

    let ft = json(&ok(d, &["finetune", "--tree", "t.ploc", "--dataset", "ds", "--lr", "10", "--epochs", "2", "--out", "ft.plocz"]));
    assert!(ft["best_val_psnr"].as_f64().unwrap() >= ft["initial_val_psnr"].as_f64().unwrap());
    assert_eq!(fs::read_to_string(d.join("ft.jsonl")).unwrap().lines().count(), 3);

    ok(d, &["export-web", "--tree", "t.ploc", "--out", "web", "--res", "32"]);
    let manifest: Value = serde_json::from_slice(&fs::read(d.join("web/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["tree"], "scene.plocz");
    assert!(d.join("web/scene.plocz").exists() && d.join("web/reference.png").exists());
}

#[test]
fn empty_scene_and_bench() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = ok(d, &["convert", "--scene", "empty", "--grid", "16", "--views", "2", "--res", "8", "--out", "e.ploc"]);
    assert_eq!(json(&out)["leaves"], 0);
    assert!(String::from_utf8_lossy(&out.stderr).contains("WARN"));
    let report = json(&ok(d, &["bench", "--tree", "e.ploc", "--views", "1", "--res", "16", "--reps", "1"]));
    assert_eq!(report["octree"]["mean_segments"], 0.0);
    assert!(report["reference"].is_null());
    let cmp = json(&ok(d, &["bench", "--tree", "e.ploc", "--scene", "empty", "--views", "1", "--res", "16", "--reps", "1", "--samples", "8"]));
    assert!(cmp["speedup"].as_f64().unwrap() > 0.0);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("c.toml"), "[global]\nseed = 9\n\n[convert]\ngrid = 16\ntau_w = 0.01\nviews = 2\nres = 8\nscene = \"empty\"\n").unwrap();
    let out = ok(d, &["--config", "c.toml", "convert", "--tau-w", "0.5", "--out", "e.ploc"]);
    let cfg = resolved(&out);
    assert_eq!(cfg["global"]["seed"], 9);
    assert_eq!(cfg["settings"]["grid"], 16);
    assert_eq!(cfg["settings"]["tau_w"], 0.5);
}

#[test]
fn exit_codes_by_failure_kind() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(run(d, &["convert", "--bogus", "1"]).status.code(), Some(2));
    fs::write(d.join("c.toml"), "[convert]\nunknown_key = 1\n").unwrap();
    assert_eq!(run(d, &["--config", "c.toml", "convert", "--out", "x.ploc"]).status.code(), Some(2));
    assert_eq!(run(d, &["convert", "--grid", "3", "--out", "x.ploc"]).status.code(), Some(2));
    assert_eq!(run(d, &["render", "--tree", "missing.ploc", "--out", "r"]).status.code(), Some(3));
    fs::write(d.join("junk.plocz"), b"PLOC not really").unwrap();
    assert_eq!(run(d, &["decompress", "--input", "junk.plocz", "--out", "x.ploc"]).status.code(), Some(3));
    assert_eq!(run(d, &["render", "--out", "r"]).status.code(), Some(2));
}

#[test]
fn divergent_finetune_reports_numeric_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_dataset(d, "ds");
    ok(d, &["convert", "--dataset", "ds", "--grid", "32", "--samples-per-voxel", "2", "--out", "t.ploc"]);
    let out = run(d, &["finetune", "--tree", "t.ploc", "--dataset", "ds", "--lr", "1e300", "--epochs", "3", "--patience", "3", "--out", "ft.ploc"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(d.join("ft.ploc").exists());
}
