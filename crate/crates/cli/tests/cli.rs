use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bonesup_core::io::{read_image, read_mask};
use bonesup_core::pipeline::PipelineConfig;
use tempfile::TempDir;

fn bonesup(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bonesup")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = bonesup(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    bonesup(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn example_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/example.toml")
}

/// A one-phantom dataset at 64x64.
fn dataset(count: usize) -> (TempDir, PathBuf) {
    let dir = TempDir::new().unwrap();
    let ds = dir.path().join("ds");
    ok(&["phantom-gen", "--count", &count.to_string(), "--size", "64", "--seed", "3", "--out", s(&ds)]);
    (dir, ds)
}

fn suppress(ds: &Path, out: &Path, extra: &[&str]) {
    let cxr = ds.join("0000_cxr.pgm");
    let mask = ds.join("0000_lung.pgm");
    let gt = ds.join("0000_soft.pgm");
    let mut args = vec!["suppress", "--input", s(&cxr), "--mask", s(&mask), "--gt", s(&gt), "--out-prefix", s(out)];
    args.extend(extra);
    ok(&args);
}

#[test]
fn example_config_holds_the_defaults() {
    assert_eq!(PipelineConfig::load(example_config()).unwrap(), PipelineConfig::default());
}

#[test]
fn schedule_dump_matches_the_library_table() {
    let out = ok(&["schedule-dump", "--config", s(&example_config())]);
    let expected = PipelineConfig::default().build_schedule().unwrap().dump_table();
    assert_eq!(out, expected);
    assert_eq!(out.lines().filter(|l| !l.starts_with('#')).count(), 50);
}

#[test]
fn oracle_suppression_writes_every_artifact() {
    let (dir, ds) = dataset(1);
    let out = dir.path().join("out");
    suppress(&ds, &out, &[]);
    for name in ["mask.pgm", "global.pgm", "local.pgm", "fused.pgm", "fused.f32"] {
        assert!(out.join(name).is_file(), "{name}");
    }
    let soft = read_image(ds.join("0000_soft.pgm")).unwrap();
    let fused = read_image(out.join("fused.f32")).unwrap();
    assert!(fused.max_abs_diff(&soft) <= 1e-3);
    assert_eq!(read_mask(out.join("mask.pgm")).unwrap(), read_mask(ds.join("0000_lung.pgm")).unwrap());
}

#[test]
fn runs_are_byte_identical() {
    let (dir, ds) = dataset(1);
    let ckpt = dir.path().join("m.bin");
    ok(&["train", "--data-dir", s(&ds), "--out", s(&ckpt), "--epochs", "1"]);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    suppress(&ds, &a, &["--model", s(&ckpt), "--seed", "5"]);
    suppress(&ds, &b, &["--model", s(&ckpt), "--seed", "5"]);
    for name in ["mask.pgm", "global.pgm", "local.pgm", "fused.pgm", "fused.f32"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn global_path_equals_the_global_half_of_a_dual_run() {
    let (dir, ds) = dataset(1);
    let ckpt = dir.path().join("m.bin");
    ok(&["train", "--data-dir", s(&ds), "--out", s(&ckpt), "--epochs", "1"]);
    let (g, d) = (dir.path().join("g"), dir.path().join("d"));
    suppress(&ds, &g, &["--model", s(&ckpt), "--path", "global", "--seed", "11"]);
    suppress(&ds, &d, &["--model", s(&ckpt), "--path", "dual", "--seed", "11"]);
    assert_eq!(fs::read(g.join("global.pgm")).unwrap(), fs::read(d.join("global.pgm")).unwrap());
    assert!(!g.join("local.pgm").exists());
    assert!(!d.join("fused.pgm").exists());
}

#[test]
fn train_then_eval_emits_table_and_csv() {
    let (dir, ds) = dataset(3);
    let ckpt = dir.path().join("m.bin");
    let log = ok(&["train", "--data-dir", s(&ds), "--out", s(&ckpt), "--epochs", "2", "--lr", "0.01", "--seed", "1"]);
    assert!(log.starts_with("conv model"), "{log}");
    let csv = dir.path().join("m.csv");
    let table = ok(&["eval", "--data-dir", s(&ds), "--model", s(&ckpt), "--csv", s(&csv)]);
    assert!(table.contains("mean±std"), "{table}");
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("image_id,bsr,mse,psnr,grad_sim"));
    assert_eq!(lines.count(), 3);
}

#[test]
fn fuse_handles_pgm_and_raw() {
    let (dir, ds) = dataset(1);
    let cxr = ds.join("0000_cxr.pgm");
    let mask = ds.join("0000_lung.pgm");
    let raw = dir.path().join("same.f32");
    ok(&["fuse", "--global", s(&cxr), "--local", s(&cxr), "--mask", s(&mask), "--out", s(&raw)]);
    let fused = read_image(&raw).unwrap();
    assert!(fused.max_abs_diff(&read_image(&cxr).unwrap()) <= 1e-6);
    let pgm = dir.path().join("again.pgm");
    ok(&["fuse", "--global", s(&raw), "--local", s(&raw), "--mask", s(&mask), "--out", s(&pgm)]);
    assert_eq!(fs::read(&pgm).unwrap(), fs::read(&cxr).unwrap());
}

#[test]
fn bench_reports_fifty_steps() {
    let out = ok(&["bench", "--size", "64", "--repetitions", "2"]);
    assert!(out.starts_with("steps 50\nrepetitions 2\n"), "{out}");
    for stage in ["sampling", "fusion", "io", "total"] {
        assert!(out.contains(stage), "{stage}");
    }
}

#[test]
fn configuration_errors_exit_with_2() {
    let (dir, ds) = dataset(1);
    let cxr = ds.join("0000_cxr.pgm");
    assert_eq!(code(&["suppress", "--input", "missing.pgm"]), 2);
    assert_eq!(code(&["suppress", "--input", s(&cxr), "--path", "sideways"]), 2);
    assert_eq!(code(&["suppress", "--input", s(&cxr), "--codec", "jpeg"]), 2);
    // The oracle needs ground truth.
    assert_eq!(code(&["suppress", "--input", s(&cxr), "--mask", s(&ds.join("0000_lung.pgm"))]), 2);
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[sampler]\nsteps = 0\n").unwrap();
    assert_eq!(code(&["schedule-dump", "--config", s(&bad)]), 2);
    fs::write(&bad, "[sampler]\nstep = 50\n").unwrap();
    assert_eq!(code(&["schedule-dump", "--config", s(&bad)]), 2);
    let ckpt = dir.path().join("m.bin");
    ok(&["train", "--data-dir", s(&ds), "--out", s(&ckpt), "--epochs", "1"]);
    assert_eq!(code(&["suppress", "--input", s(&cxr), "--model", s(&ckpt), "--steps", "30"]), 2);
    assert_eq!(code(&["train", "--data-dir", s(&ds), "--out", s(&ckpt), "--arch", "unet"]), 2);
}

#[test]
fn numeric_failures_exit_with_3() {
    let (_dir, ds) = dataset(1);
    let cxr = ds.join("0000_cxr.pgm");
    let soft = ds.join("0000_soft.pgm");
    let mask = ds.join("0000_lung.pgm");
    let out = ds.join("f.pgm");
    // Far below machine precision, so the solver stagnates.
    let args = ["fuse", "--global", s(&cxr), "--local", s(&soft), "--mask", s(&mask), "--tol", "1e-300", "--out", s(&out)];
    assert_eq!(code(&args), 3);
    assert!(!out.exists());
}

#[test]
fn other_failures_exit_with_1() {
    let dir = TempDir::new().unwrap();
    let junk = dir.path().join("junk.pgm");
    fs::write(&junk, b"P2\n1 1\n255\n0\n").unwrap();
    let args = ["fuse", "--global", s(&junk), "--local", s(&junk), "--mask", s(&junk), "--out", "x.pgm"];
    assert_eq!(code(&args), 1);
}
