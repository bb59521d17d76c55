use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn agcd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_agcd")).args(args).output().expect("spawn agcd")
}

fn ok(args: &[&str]) -> String {
    let out = agcd(args);
    assert!(
        out.status.success(),
        "agcd {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: &str = r#"{
  "data": {"train_samples": 12, "test_samples": 4, "test_horizon": 3},
  "train": {"steps": 3, "batch": 2},
  "eval": {"seeds": [1], "rollout_steps": 3}
}"#;

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        let w = Self {
            dir: tempfile::tempdir().unwrap(),
        };
        fs::write(w.path("tiny.json"), TINY).unwrap();
        w
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn gen(&self, name: &str, seed: &str, samples: &str, horizon: &str) -> PathBuf {
        let out = self.path(name);
        ok(&["gen-data", "--seed", seed, "--samples", samples, "--horizon", horizon, "--out", p(&out)]);
        out
    }

    /// Train and test datasets with narrations, plus one trained checkpoint.
    fn trained(&self, variant: &str) -> (PathBuf, PathBuf, PathBuf, PathBuf) {
        let train = self.gen("train", "101", "8", "1");
        let test = self.gen("test", "202", "4", "8");
        let cache = self.path("narration.jsonl");
        let cfg = self.path("tiny.json");
        ok(&["narrate", "--data", p(&train), "--cache", p(&cache)]);
        ok(&["narrate", "--data", p(&test), "--cache", p(&cache), "--stats-from", p(&train), "--max-time", "1"]);
        let ckpt = self.path(&format!("{variant}.ckpt"));
        ok(&[
            "train", "--config", p(&cfg), "--data", p(&train), "--cache", p(&cache), "--variant", variant,
            "--ckpt", p(&ckpt), "--out", p(&self.path("train-out")),
        ]);
        (train, test, cache, ckpt)
    }
}

#[test]
fn gen_data_is_deterministic() {
    let w = Workspace::new();
    let a = w.gen("a", "5", "6", "2");
    let b = w.gen("b", "5", "6", "2");
    for f in ["grid.agcd", "annotations.jsonl", "resolved_config.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = w.gen("c", "6", "6", "2");
    assert_ne!(fs::read(a.join("grid.agcd")).unwrap(), fs::read(c.join("grid.agcd")).unwrap());
}

#[test]
fn zero_samples_write_a_valid_empty_dataset() {
    let w = Workspace::new();
    let d = w.gen("empty", "1", "0", "1");
    assert!(d.join("grid.agcd").exists());
    let out = ok(&["narrate", "--data", p(&d), "--cache", p(&w.path("c.jsonl"))]);
    assert!(out.contains("narrated 0"));
}

#[test]
fn usage_errors_exit_two() {
    let out = agcd(&["gen-data", "--bogus", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = agcd(&["ablate", "--suite", "everything", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_config_exits_two_and_missing_data_exits_one() {
    let w = Workspace::new();
    let cfg = w.path("bad.json");
    fs::write(&cfg, r#"{"train": {"stepz": 1}}"#).unwrap();
    let out = agcd(&["gen-data", "--config", p(&cfg), "--out", p(&w.path("d"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = agcd(&["narrate", "--data", p(&w.path("nowhere")), "--cache", p(&w.path("c.jsonl"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn narration_passes_and_warm_cache_is_free() {
    let w = Workspace::new();
    let d = w.gen("d", "3", "10", "1");
    let cache = w.path("c.jsonl");
    let first = ok(&["narrate", "--data", p(&d), "--cache", p(&cache)]);
    assert!(first.contains("narrated 10"), "{first}");
    assert!(first.contains("FAIL 0"), "{first}");
    let second = ok(&["narrate", "--data", p(&d), "--cache", p(&cache)]);
    assert!(second.contains("narrated 0"), "{second}");
    assert!(second.trim_end().ends_with("backend-calls 0"), "{second}");
}

#[test]
fn zero_rounds_with_defects_fall_back() {
    let w = Workspace::new();
    let d = w.gen("d", "3", "6", "1");
    let out = ok(&[
        "narrate", "--data", p(&d), "--cache", p(&w.path("c.jsonl")), "--rounds", "0", "--defect-rate", "1",
    ]);
    let fallback: usize = out
        .split_whitespace()
        .skip_while(|t| *t != "fallback")
        .nth(1)
        .and_then(|n| n.parse().ok())
        .unwrap_or_else(|| panic!("no fallback counter in {out}"));
    assert!(fallback > 0, "{out}");
}

#[test]
fn train_eval_and_text_controls() {
    let w = Workspace::new();
    let (_, test, cache, ckpt) = w.trained("agcd");
    assert!(fs::read_to_string(w.path("train-out/loss.csv")).unwrap().starts_with("step,loss\n"));
    let mut metrics = Vec::new();
    for text in ["matched", "shuffled"] {
        let out = w.path(&format!("eval-{text}"));
        ok(&["eval", "--ckpt", p(&ckpt), "--data", p(&test), "--cache", p(&cache), "--text", text, "--out", p(&out)]);
        let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
        assert_eq!(csv.lines().next(), Some("lead_hours,variable,rmse,acc"));
        assert_eq!(csv.lines().count(), 5);
        metrics.push(csv);
    }
    assert_ne!(metrics[0], metrics[1]);
}

#[test]
fn matched_text_without_cache_is_explained() {
    let w = Workspace::new();
    let (_, test, _, ckpt) = w.trained("agcd");
    let out = agcd(&["eval", "--ckpt", p(&ckpt), "--data", p(&test), "--out", p(&w.path("e"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--cache"));
}

#[test]
fn rollout_audit_passes_and_leak_fails() {
    let w = Workspace::new();
    let (_, test, cache, ckpt) = w.trained("agcd");
    let out = w.path("roll");
    let stdout = ok(&[
        "rollout", "--ckpt", p(&ckpt), "--data", p(&test), "--cache", p(&cache), "--steps", "8", "--audit", "--out", p(&out),
    ]);
    assert!(stdout.contains("audit PASS"), "{stdout}");
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 8 * 4);
    assert_eq!(fs::read_to_string(out.join("trace.jsonl")).unwrap().lines().count(), 4);

    let leak = agcd(&[
        "rollout", "--ckpt", p(&ckpt), "--data", p(&test), "--cache", p(&cache), "--steps", "8", "--audit",
        "--inject-leak", "3", "--out", p(&w.path("leak")),
    ]);
    assert_eq!(leak.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&leak.stdout);
    assert!(stdout.contains("audit FAIL at step 3"), "{stdout}");
}

#[test]
fn render_is_deterministic() {
    let w = Workspace::new();
    let d = w.gen("d", "9", "2", "1");
    let a = w.path("ra");
    let b = w.path("rb");
    ok(&["render", "--data", p(&d), "--sample", "s9-00001", "--out", p(&a)]);
    ok(&["render", "--data", p(&d), "--sample", "s9-00001", "--out", p(&b)]);
    for v in ["z", "t", "u", "v"] {
        let f = format!("s9-00001_t0_{v}.ppm");
        let img = fs::read(a.join(&f)).unwrap();
        assert!(img.starts_with(b"P6\n"));
        assert_eq!(img, fs::read(b.join(&f)).unwrap());
    }
    ok(&["render", "--data", p(&d), "--sample", "s9-00000", "--var", "t", "--time", "1", "--out", p(&w.path("one"))]);
    assert_eq!(fs::read_dir(w.path("one")).unwrap().count(), 1);
    let missing = agcd(&["render", "--data", p(&d), "--sample", "nope", "--out", p(&a)]);
    assert_eq!(missing.status.code(), Some(1));
}

fn suite_rows(w: &Workspace, suite: &str) -> Vec<String> {
    let out = w.path(suite);
    ok(&["ablate", "--config", p(&w.path("tiny.json")), "--suite", suite, "--out", p(&out)]);
    let csv = fs::read_to_string(out.join(format!("{suite}.csv"))).unwrap();
    let mut lines = csv.lines().map(str::to_string);
    assert_eq!(lines.next().as_deref(), Some("setting,lead_hours,variable,rmse,acc"));
    lines.collect()
}

#[test]
fn ablate_crid_has_four_settings_per_variable() {
    let w = Workspace::new();
    let rows = suite_rows(&w, "crid");
    assert_eq!(rows.len(), 16);
    let notes = fs::read_to_string(w.path("crid/crid_notes.txt")).unwrap();
    assert!(notes.contains("85/8"), "{notes}");
}

#[test]
fn ablate_agents_has_five_settings_per_variable() {
    let w = Workspace::new();
    let rows = suite_rows(&w, "agents");
    assert_eq!(rows.len(), 20);
    for v in ["z", "t", "u", "v"] {
        assert_eq!(rows.iter().filter(|r| r.split(',').nth(2) == Some(v)).count(), 5);
    }
}
