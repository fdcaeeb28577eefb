//! End-to-end runs of the `objdecode` binary on small synthetic inputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use objdecode::datamodel::{load_dataset, N_EXEMPLARS};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_objdecode"));
    c.env("RUST_LOG", "info");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn small_subject(dir: &Path, name: &str, seed: &str) -> PathBuf {
    ok(
        dir,
        &["synth", "--out", name, "--seed", seed, "--subject", name, "--trials-per-exemplar", "4", "--snr", "4"],
    );
    dir.join(name)
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut v = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            v.extend(files_under(&p));
        } else {
            v.push(p);
        }
    }
    v.sort();
    v
}

#[test]
fn synth_is_readable_and_reproducible() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &["synth", "--out", "a.eegd", "--seed", "9", "--trials-per-exemplar", "2"]);
    ok(t.path(), &["synth", "--out", "b.eegd", "--seed", "9", "--trials-per-exemplar", "2"]);
    let a = fs::read(t.path().join("a.eegd")).unwrap();
    assert_eq!(a, fs::read(t.path().join("b.eegd")).unwrap());
    let d = load_dataset(t.path().join("a.eegd")).unwrap();
    assert_eq!(d.n_trials(), 2 * N_EXEMPLARS);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(t.path().join("a.eegd.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"]["seed"], 9);
    assert_eq!(manifest["config"]["n_trials_per_exemplar"], 2);
}

#[test]
fn synth_full_subject_has_5184_trials() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &["synth", "--out", "full.eegd"]);
    let d = load_dataset(t.path().join("full.eegd")).unwrap();
    assert_eq!(d.n_trials(), 5184);
    assert!(d.is_model_ready());
}

#[test]
fn synth_config_errors_exit_2() {
    let t = tempfile::tempdir().unwrap();
    fs::write(t.path().join("bad.json"), r#"{"n_trials_per_exemplar": 0}"#).unwrap();
    let o = run(t.path(), &["synth", "--config", "bad.json", "--out", "x.eegd"]);
    assert_eq!(o.status.code(), Some(2));
    fs::write(t.path().join("garbled.json"), "{").unwrap();
    let o = run(t.path(), &["synth", "--config", "garbled.json", "--out", "x.eegd"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!t.path().join("x.eegd").exists());
}

#[test]
fn preprocess_chain_logs_coefficients_and_is_reproducible() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &["synth", "--continuous", "--out", "raw.eegr", "--markers", "12"]);
    let o = ok(t.path(), &["preprocess", "--input", "raw.eegr", "--out", "e1.eegd"]);
    let log = String::from_utf8_lossy(&o.stderr);
    assert!(log.contains("high-pass sections") && log.contains("low-pass sections"), "{log}");
    assert!(log.contains("b: ["), "coefficients missing from log: {log}");
    ok(t.path(), &["preprocess", "--input", "raw.eegr", "--out", "e2.eegd"]);
    assert_eq!(fs::read(t.path().join("e1.eegd")).unwrap(), fs::read(t.path().join("e2.eegd")).unwrap());

    let d = load_dataset(t.path().join("e1.eegd")).unwrap();
    assert_eq!(d.sampling_rate_hz(), 62.5);
    assert_eq!(d.n_samples(), 32);
    assert_eq!(d.n_trials(), 12);
    let manifest = fs::read_to_string(t.path().join("e1.eegd.manifest.json")).unwrap();
    assert!(manifest.contains("\"lowpass\"") && manifest.contains("\"sections\""));
}

#[test]
fn preprocess_rejects_nyquist_violation() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &["synth", "--continuous", "--out", "raw.eegr", "--markers", "4"]);
    let o = run(t.path(), &["preprocess", "--input", "raw.eegr", "--out", "e.eegd", "--lowpass-hz", "40"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("Nyquist"));
}

#[test]
fn evaluate_prints_accuracy_line_and_writes_reports() {
    let t = tempfile::tempdir().unwrap();
    small_subject(t.path(), "s.eegd", "1");
    let o = ok(t.path(), &["evaluate", "--data", "s.eegd", "--methods", "lda", "--folds", "4", "--out", "ev"]);
    let line = stdout(&o);
    assert!(line.starts_with("6-class accuracy: "), "{line}");
    assert!(line.contains(" ± ") && line.contains("over 4 folds") && line.contains("chance 16.67%"));
    for f in ["report.json", "folds.csv", "per_class.csv", "per_exemplar.csv", "confusion.svg", "exemplars.svg", "manifest.json"] {
        assert!(t.path().join("ev").join(f).exists(), "missing {f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(t.path().join("ev/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"]["fold_seeds"]["s.eegd"].as_array().unwrap().len(), 4);
    assert_eq!(manifest["config"]["spec"]["variant"], "lda");

    let o = ok(
        t.path(),
        &["evaluate", "--data", "s.eegd", "--methods", "lda", "--folds", "4", "--classes", "72", "--out", "ev72"],
    );
    let line = stdout(&o);
    assert!(line.starts_with("72-class accuracy"), "{line}");
    assert!(line.contains("1.39% (1/72") && line.contains("1.38%"), "{line}");
}

#[test]
fn config_file_is_overridden_by_flags() {
    let t = tempfile::tempdir().unwrap();
    small_subject(t.path(), "s.eegd", "1");
    fs::write(t.path().join("run.json"), r#"{"methods": ["lda"], "folds": 3, "seed": 5, "data": ["s.eegd"]}"#).unwrap();
    ok(t.path(), &["evaluate", "--config", "run.json", "--folds", "2", "--out", "ev"]);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(t.path().join("ev/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["run"]["folds"], 2);
    assert_eq!(manifest["config"]["run"]["seed"], 5);
    assert_eq!(manifest["seeds"]["seed"], 5);
}

#[test]
fn compare_emits_one_row_per_method_with_stars_column() {
    let t = tempfile::tempdir().unwrap();
    small_subject(t.path(), "s1.eegd", "1");
    small_subject(t.path(), "s2.eegd", "2");
    let o = ok(
        t.path(),
        &[
            "compare", "--data", "s1.eegd", "s2.eegd", "--methods", "lda,plain_cnn,attention_cnn", "--folds", "2",
            "--epochs", "1", "--out", "cmp",
        ],
    );
    let table = stdout(&o);
    for m in ["lda", "plain_cnn", "attention_cnn"] {
        assert!(table.lines().any(|l| l.starts_with(m)), "no row for {m} in\n{table}");
    }
    assert!(table.contains("*p-value < 0.05, **p-value < 0.01"));
    let csv = fs::read_to_string(t.path().join("cmp/comparison.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "method,s1.eegd,s2.eegd,mean,std,t,p,stars");
    assert_eq!(lines.count(), 3);
    assert!(t.path().join("cmp/s1_eegd__attention_cnn__confusion.svg").exists());
}

#[test]
fn train_writes_an_inspectable_checkpoint() {
    let t = tempfile::tempdir().unwrap();
    small_subject(t.path(), "s.eegd", "1");
    ok(t.path(), &["train", "--data", "s.eegd", "--methods", "shallow_convnet", "--epochs", "1", "--out", "tr"]);
    let o = ok(t.path(), &["inspect", "tr/model.edkp"]);
    let s = stdout(&o);
    assert!(s.contains("model: shallow_convnet") && s.contains("epochs: 1"), "{s}");
    let o = ok(t.path(), &["inspect", "s.eegd"]);
    assert!(stdout(&o).contains("trials per exemplar: min 4, max 4"));
}

#[test]
fn exit_codes_distinguish_config_and_divergence() {
    let t = tempfile::tempdir().unwrap();
    small_subject(t.path(), "s.eegd", "1");
    let o = run(t.path(), &["evaluate", "--data", "s.eegd", "--methods", "resnet", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(t.path(), &["evaluate", "--data", "s.eegd", "--precision", "f64", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
    fs::write(t.path().join("mask.json"), r#"{"name": "bad", "indices": [500]}"#).unwrap();
    let o = run(t.path(), &["evaluate", "--data", "s.eegd", "--mask", "mask.json", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
    fs::write(t.path().join("div.json"), r#"{"train": {"adam": {"learning_rate": 1e30}}}"#).unwrap();
    let o = run(
        t.path(),
        &["evaluate", "--config", "div.json", "--data", "s.eegd", "--methods", "plain_cnn", "--epochs", "1", "--folds", "2", "--out", "x"],
    );
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn gradcheck_passes_and_tight_tolerance_fails_at_f32() {
    let t = tempfile::tempdir().unwrap();
    let o = ok(t.path(), &["gradcheck", "--out", "gc"]);
    let s = stdout(&o);
    assert!(s.contains("conv2d") && s.contains("max rel err") && s.contains("PASS"));
    assert!(!s.contains("FAIL"));
    assert!(t.path().join("gc/gradcheck.json").exists());
    let o = run(t.path(), &["gradcheck", "--precision", "f32", "--tolerance", "1e-6", "--instances", "1"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn outputs_stay_under_the_output_directory() {
    let t = tempfile::tempdir().unwrap();
    small_subject(t.path(), "s.eegd", "1");
    let before = files_under(t.path());
    ok(t.path(), &["evaluate", "--data", "s.eegd", "--methods", "lda", "--folds", "3", "--out", "runs/ev"]);
    let new: Vec<PathBuf> = files_under(t.path()).into_iter().filter(|p| !before.contains(p)).collect();
    assert!(!new.is_empty());
    assert!(new.iter().all(|p| p.starts_with(t.path().join("runs/ev"))), "{new:?}");
}
