use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sweepseg"))
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tiny.toml")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_string_lossy().into_owned()
}

/// Synthesizes a clean plate and returns the envelope path.
fn plate(dir: &TempDir, name: &str, thickness: &str, seed: &str) -> String {
    let rf = p(dir, &format!("{name}.usv"));
    let cfg = fixture();
    let cfg = cfg.to_str().unwrap();
    ok(&["synth", "--config", cfg, "--out", &rf, "--clean-thickness", thickness, "--seed", seed]);
    let env = p(dir, &format!("{name}.env.usv"));
    ok(&["envelope", "--in", &rf, "--out", &env]);
    env
}

#[test]
fn synth_writes_three_files_deterministically() {
    let dir = TempDir::new().unwrap();
    let cfg = fixture();
    let cfg = cfg.to_str().unwrap();
    ok(&["synth", "--config", cfg, "--out", &p(&dir, "a.usv")]);
    ok(&["synth", "--config", cfg, "--out", &p(&dir, "b.usv")]);
    for f in ["a.usv", "a.truth.csv", "a.mask.usv"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    let read = |f: &str| fs::read(dir.path().join(f)).unwrap();
    assert_eq!(read("a.usv"), read("b.usv"));
    assert_eq!(read("a.mask.usv"), read("b.mask.usv"));
    assert_eq!(read("a.truth.csv"), read("b.truth.csv"));
    ok(&["synth", "--config", cfg, "--out", &p(&dir, "c.usv"), "--seed", "8"]);
    assert_ne!(read("a.usv"), read("c.usv"));
}

#[test]
fn invalid_config_names_the_key() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[synth]\nsteps = [{ start_frame = 0, end_frame = 4, thickness_mm = -1.0 }]\n").unwrap();
    let out = run(&["synth", "--config", cfg.to_str().unwrap(), "--out", &p(&dir, "x.usv")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("synth.steps[0].thickness_mm"), "{}", stderr(&out));

    fs::write(&cfg, "[infer]\nconfidance = 0.9\n").unwrap();
    let out = run(&["synth", "--config", cfg.to_str().unwrap(), "--out", &p(&dir, "x.usv")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("infer"), "{}", stderr(&out));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let out = run(&["train", "--train", "a.usv", "--out", &p(&dir, "m.ussm")]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["--threads", "0", "envelope", "--in", "a", "--out", "b"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_is_a_runtime_error() {
    let dir = TempDir::new().unwrap();
    let out = run(&["envelope", "--in", &p(&dir, "nope.usv"), "--out", &p(&dir, "e.usv")]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_infer_eval_round() {
    let dir = TempDir::new().unwrap();
    let cfg = fixture();
    let cfg = cfg.to_str().unwrap();
    let train = plate(&dir, "train0", "3.0", "1");
    let val = plate(&dir, "val0", "3.5", "2");
    let model = p(&dir, "model.ussm");
    ok(&["train", "--config", cfg, "--train", &train, "--val", &val, "--out", &model]);
    let history = fs::read_to_string(dir.path().join("model.history.csv")).unwrap();
    let rows = history.lines().count() - 1;
    assert!((1..=2).contains(&rows), "{history}");

    let rf = p(&dir, "sample.usv");
    ok(&["synth", "--config", cfg, "--out", &rf]);
    let env = p(&dir, "sample.env.usv");
    ok(&["envelope", "--in", &rf, "--out", &env]);

    let out = run(&["infer", "--config", cfg, "--model", &model, "--in", &env, "--confidence", "1.0", "--out", &p(&dir, "x.usv")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("confidence"));

    let mask = p(&dir, "final.usv");
    let infer = ["infer", "--config", cfg, "--model", &model, "--in", &env, "--confidence", "0.9999999", "--stages", "--out", &mask];
    ok(&infer);
    let first = fs::read(&mask).unwrap();
    ok(&infer);
    assert_eq!(first, fs::read(&mask).unwrap());
    for s in ["forward", "backward", "combined"] {
        assert!(dir.path().join(format!("final.{s}.usv")).is_file());
    }
    // RF input is enveloped on the way in.
    let from_rf = p(&dir, "rf_final.usv");
    ok(&["infer", "--config", cfg, "--model", &model, "--in", &rf, "--confidence", "0.9999999", "--out", &from_rf]);
    assert_eq!(first, fs::read(&from_rf).unwrap());

    let report = p(&dir, "report.json");
    let truth = p(&dir, "sample.truth.csv");
    let out = ok(&["eval", "--mask", &mask, "--stages", "--truth", &truth, "--volume", &env, "--report", &report]);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("final:"));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    for key in ["stages", "defects", "groups", "overall"] {
        assert!(json.get(key).is_some(), "report lacks {key}");
    }
    let stages: Vec<&str> = json["stages"].as_array().unwrap().iter().map(|s| s["stage"].as_str().unwrap()).collect();
    assert_eq!(stages, ["forward", "backward", "combined", "final"]);
    for f in ["report.detection.csv", "report.sizing.csv", "report.localization.csv"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }

    // Scoring the truth mask itself.
    let perfect = p(&dir, "perfect.json");
    ok(&["eval", "--mask", &p(&dir, "sample.mask.usv"), "--truth", &truth, "--report", &perfect]);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&perfect).unwrap()).unwrap();
    assert_eq!(json["stages"][0]["accuracy"], 100.0);
    assert_eq!(json["stages"][0]["fp"], 0);
}

#[test]
fn render_writes_pgm() {
    let dir = TempDir::new().unwrap();
    let env = plate(&dir, "p", "3.0", "5");
    let c = p(&dir, "c.pgm");
    ok(&["render", "--in", &env, "--cscan", &c]);
    let img = image::open(&c).unwrap().into_luma8();
    assert_eq!(img.dimensions(), (10, 40));
    let b = p(&dir, "b.pgm");
    ok(&["render", "--in", &env, "--bscan", "3", &b]);
    assert_eq!(image::open(&b).unwrap().into_luma8().dimensions(), (10, 320));
    let out = run(&["render", "--in", &env, "--cscan", &c, "--gate", "9"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn empty_mask_renders_black() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("clean.toml");
    fs::write(&cfg, "[synth]\nframes = 6\nbeams = 4\n").unwrap();
    let rf = p(&dir, "c.usv");
    ok(&["synth", "--config", cfg.to_str().unwrap(), "--out", &rf]);
    let out = p(&dir, "m.pgm");
    ok(&["render", "--in", &p(&dir, "c.mask.usv"), "--cscan", &out]);
    let img = image::open(&out).unwrap().into_luma8();
    assert!(img.pixels().all(|px| px.0[0] == 0));
}

#[test]
fn cscan_matches_golden() {
    let dir = TempDir::new().unwrap();
    let cfg = fixture();
    let rf = p(&dir, "g.usv");
    ok(&["synth", "--config", cfg.to_str().unwrap(), "--out", &rf]);
    let pgm = p(&dir, "g.pgm");
    ok(&["render", "--in", &p(&dir, "g.mask.usv"), "--cscan", &pgm]);
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/tiny_truth_cscan.pgm");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::copy(&pgm, &golden).unwrap();
    }
    assert_eq!(fs::read(&pgm).unwrap(), fs::read(&golden).unwrap());
}

#[test]
fn pipeline_matches_the_individual_commands() {
    let dir = TempDir::new().unwrap();
    let cfg = fixture();
    let cfg = cfg.to_str().unwrap();
    let run_dir = dir.path().join("run");
    ok(&["pipeline", "--config", cfg, "--out-dir", run_dir.to_str().unwrap()]);

    // seed 7: train plates from 8, val plates from 108.
    let train = plate(&dir, "train0", "3.0", "8");
    let val = plate(&dir, "val0", "3.5", "108");
    let model = p(&dir, "model.ussm");
    ok(&["train", "--config", cfg, "--train", &train, "--val", &val, "--out", &model]);
    let rf = p(&dir, "sample.usv");
    ok(&["synth", "--config", cfg, "--out", &rf]);
    let env = p(&dir, "sample.env.usv");
    ok(&["envelope", "--in", &rf, "--out", &env]);
    let mask = p(&dir, "final_0.999.usv");
    ok(&["infer", "--config", cfg, "--model", &model, "--in", &env, "--confidence", "0.999", "--stages", "--out", &mask]);
    let report = p(&dir, "report_0.999.json");
    ok(&["eval", "--mask", &mask, "--stages", "--truth", &p(&dir, "sample.truth.csv"), "--volume", &env, "--report", &report]);

    for f in [
        "train0.env.usv",
        "val0.env.usv",
        "sample.usv",
        "sample.truth.csv",
        "model.ussm",
        "model.history.csv",
        "final_0.999.usv",
        "final_0.999.forward.usv",
        "final_0.999.combined.usv",
        "report_0.999.json",
        "report_0.999.sizing.csv",
    ] {
        let a = fs::read(run_dir.join(f)).unwrap_or_else(|e| panic!("{f}: {e}"));
        let b = fs::read(dir.path().join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }
    assert!(run_dir.join("sizing.csv").is_file());
}
