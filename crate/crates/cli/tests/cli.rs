use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hypcbm"));
    cmd.env_remove("HYPCBM_THREADS").env("RUST_LOG", "error");
    cmd
}

fn run(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn hypcbm");
    assert!(
        out.status.success(),
        "hypcbm {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// One synth corpus and one trained head shared by every test in this file.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn s(&self, name: &str) -> String {
        self.root.join("synth").join(name).to_string_lossy().into_owned()
    }
    fn head(&self) -> String {
        self.root.join("train").join("model.hcmh").to_string_lossy().into_owned()
    }
    fn out(&self, name: &str) -> String {
        self.root.join(name).to_string_lossy().into_owned()
    }
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let f = Fixture { _dir: dir, root };
        run(&["synth", "-o", &f.out("synth")]);
        run(&[
            "train",
            "--bank",
            &f.s("bank.hcbe"),
            "--train-images",
            &f.s("train.hcbe"),
            "--test-images",
            &f.s("test.hcbe"),
            "--lambda",
            "1e-5",
            "-o",
            &f.out("train"),
        ]);
        f
    })
}

#[test]
fn synth_writes_corpus_and_manifest() {
    let f = fixture();
    for name in ["bank.hcbe", "bank.json", "train.hcbe", "test.hcbe", "hierarchy.tsv", "ground_truth.json"] {
        assert!(Path::new(&f.s(name)).exists(), "{name}");
    }
    let m = read_json(&f.root.join("synth").join(hypcbm_cli::MANIFEST_FILE));
    assert_eq!(m["command"], "synth");
    assert!(m["outputs"].as_array().unwrap().iter().any(|o| o == "bank.hcbe"));
}

#[test]
fn train_reports_perfect_synth_accuracy() {
    let f = fixture();
    let r = read_json(&f.root.join("train").join("train_report.json"));
    assert_eq!(r["converged"], true);
    assert_eq!(r["test_accuracy"], 1.0);
    let m = read_json(&f.root.join("train").join(hypcbm_cli::MANIFEST_FILE));
    let inputs = m["inputs"].as_object().unwrap();
    assert_eq!(inputs.len(), 6, "binary files plus their json sidecars");
    assert!(inputs.values().all(|h| h.as_str().unwrap().len() == 64));
}

#[test]
fn validate_and_filter() {
    let f = fixture();
    run(&[
        "validate",
        "--bank",
        &f.s("bank.hcbe"),
        "--images",
        &f.s("test.hcbe"),
        "--hierarchy",
        &f.s("hierarchy.tsv"),
        "--head",
        &f.head(),
        "-o",
        &f.out("validate"),
    ]);
    let v = read_json(&f.root.join("validate").join("validation.json"));
    assert_eq!(v["bank"]["concepts"], 13);
    run(&[
        "filter",
        "--bank",
        &f.s("bank.hcbe"),
        "--hierarchy",
        &f.s("hierarchy.tsv"),
        "-o",
        &f.out("filter"),
    ]);
    let r = read_json(&f.root.join("filter").join("filter_report.json"));
    assert!(r.is_object());
    assert!(f.root.join("filter").join("hierarchy.tsv").exists());
}

#[test]
fn consistency_beats_cosine() {
    let f = fixture();
    run(&[
        "consistency",
        "--bank",
        &f.s("bank.hcbe"),
        "--images",
        &f.s("test.hcbe"),
        "--hierarchy",
        &f.s("hierarchy.tsv"),
        "--transitive",
        "-o",
        &f.out("consistency"),
    ]);
    let r = read_json(&f.root.join("consistency").join("consistency.json"));
    assert_eq!(r["hypcbm"]["consistency"], 1.0);
    assert!(r["cosine"]["consistency"].as_f64().unwrap() < 1.0);
    assert_eq!(r["hypcbm"]["mean_active"], r["cosine"]["mean_active"]);
}

#[test]
fn activate_stability_and_law() {
    let f = fixture();
    run(&["activate", "--bank", &f.s("bank.hcbe"), "--images", &f.s("test.hcbe"), "-o", &f.out("act")]);
    assert!(f.root.join("act").join("activations.hcam").exists());
    run(&[
        "stability",
        "--bank",
        &f.s("bank.hcbe"),
        "--images",
        &f.s("test.hcbe"),
        "--head",
        &f.head(),
        "--sigma",
        "0.0",
        "-o",
        &f.out("stab"),
    ]);
    let s = read_json(&f.root.join("stab").join("stability.json"));
    assert_eq!(s["mean_jaccard"], 1.0);
    assert_eq!(s["clean_accuracy"], s["perturbed_accuracy"]);
    run(&["fit-law", "--bank", &f.s("bank.hcbe"), "--hierarchy", &f.s("hierarchy.tsv"), "-o", &f.out("law")]);
    let l = read_json(&f.root.join("law").join("scaling_law.json"));
    assert_eq!(l["n_pairs"], 12);
}

#[test]
fn calibrate_eta_youden_from_ground_truth() {
    let f = fixture();
    run(&[
        "calibrate-eta",
        "--bank",
        &f.s("bank.hcbe"),
        "--images",
        &f.s("train.hcbe"),
        "--ground-truth",
        &f.s("ground_truth.json"),
        "-o",
        &f.out("cal"),
    ]);
    let c = read_json(&f.root.join("cal").join("calibration.json"));
    let eta = c["eta_img"].as_f64().unwrap();
    assert!((0.0..=3.0).contains(&eta));
    assert!(c["J"].as_f64().unwrap() > 0.9);
    assert!(f.root.join("cal").join("roc.csv").exists());
}

#[test]
fn intervene_on_perfect_head_is_degenerate() {
    let f = fixture();
    let out = bin()
        .args([
            "intervene",
            "--bank",
            &f.s("bank.hcbe"),
            "--images",
            &f.s("test.hcbe"),
            "--head",
            &f.head(),
            "-o",
            &f.out("int"),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let line: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(line["error"], "degenerate");
}

#[test]
fn errors_are_one_json_line() {
    let f = fixture();
    let out = bin()
        .args(["train", "--bank", &f.s("bank.hcbe"), "-o", &f.out("bad")])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8(out.stderr).unwrap();
    assert_eq!(text.trim_end().lines().count(), 1, "{text}");
    let line: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(line["error"], "missing_setting");
    assert!(line["message"].as_str().unwrap().contains("--train-images"));

    let out = bin()
        .args(["activate", "--bank", "/nonexistent/bank.hcbe", "--images", "x", "-o", &f.out("bad2")])
        .output()
        .unwrap();
    let line: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(line["error"], "io");
}

#[test]
fn config_file_is_overridden_by_flags() {
    let f = fixture();
    let cfg = f.root.join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "bank = {:?}\ntrain_images = {:?}\ntest_images = {:?}\nlambda = 0.01\n",
            f.s("bank.hcbe"),
            f.s("train.hcbe"),
            f.s("test.hcbe")
        ),
    )
    .unwrap();
    let cfg = cfg.to_string_lossy().into_owned();
    run(&["--config", &cfg, "train", "-o", &f.out("cfg_file")]);
    let r = read_json(&f.root.join("cfg_file").join("train_report.json"));
    assert_eq!(r["lambda"], 0.01);
    run(&["--config", &cfg, "train", "--lambda", "1e-5", "-o", &f.out("cfg_flag")]);
    let r = read_json(&f.root.join("cfg_flag").join("train_report.json"));
    assert_eq!(r["lambda"], 1e-5);

    let bad = f.root.join("bad.toml");
    std::fs::write(&bad, "lamda = 0.1\n").unwrap();
    let out = bin()
        .args(["--config", bad.to_str().unwrap(), "train", "-o", &f.out("cfg_bad")])
        .output()
        .unwrap();
    let line: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(line["error"], "config");
}

#[test]
fn bad_thread_env_is_rejected() {
    let f = fixture();
    let out = bin()
        .env("HYPCBM_THREADS", "zero")
        .args(["fit-law", "--bank", &f.s("bank.hcbe"), "--hierarchy", &f.s("hierarchy.tsv"), "-o", &f.out("thr")])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let line: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(line["message"].as_str().unwrap().contains("HYPCBM_THREADS"));
}
