//! Drives the `propall` binary end to end.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use propall_core::datasets::{load_pll_csv, CorruptionSpec, PllDataset};
use propall_core::nn::TrainHistory;

fn propall(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_propall"))
        .args(args)
        .env_remove(propall_cli::OUT_DIR_ENV)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Three linearly separable classes in four dimensions, true labels only.
fn write_labeled(dir: &Path, name: &str, n: usize) -> PathBuf {
    let mut text = String::from("# pll-csv v1 k=3 corruption=none\n");
    for i in 0..n {
        let c = i % 3;
        let wiggle = ((i * 37) % 17) as f64 / 17.0 - 0.5;
        let mut f = [0.2 * wiggle; 4];
        f[c] += 2.0;
        f[3] = wiggle;
        text.push_str(&format!(
            "{c};{c};{:?},{:?},{:?},{:?}\n",
            f[0], f[1], f[2], f[3]
        ));
    }
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn corrupt_toy(dir: &Path) -> PathBuf {
    let clean = write_labeled(dir, "clean.csv", 120);
    let out = dir.join("toy.csv");
    let o = propall(&[
        "corrupt",
        "--data",
        s(&clean),
        "--mode",
        "fixed",
        "--extra",
        "1",
        "--seed",
        "5",
        "-o",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out
}

const SMALL: &[&str] = &["--arch", "4,6,3", "--batch", "16", "--epochs", "3"];

#[test]
fn corrupt_is_reproducible_and_writes_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let clean = write_labeled(dir.path(), "clean.csv", 30);
    let mut outputs = Vec::new();
    for name in ["a/out.csv", "b/out.csv"] {
        let out = dir.path().join(name);
        let o = propall(&[
            "corrupt",
            "--data",
            s(&clean),
            "--mode",
            "bernoulli",
            "--q",
            "0.4",
            "--seed",
            "9",
            "-o",
            s(&out),
        ]);
        assert_eq!(code(&o), 0);
        assert!(stdout(&o).contains("wrote 30 rows"));
        outputs.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);

    let expected = load_pll_csv(&clean)
        .unwrap()
        .corrupted(&CorruptionSpec::Bernoulli { q: 0.4 }, 9)
        .unwrap();
    let written = load_pll_csv(dir.path().join("a/out.csv")).unwrap();
    assert_eq!(written, expected);

    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("a/out.csv.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["command"], "corrupt");
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["rng"], "chacha8");
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let clean = write_labeled(dir.path(), "clean.csv", 6);
    let out = dir.path().join("o.csv");
    for args in [
        vec!["frobnicate"],
        vec![
            "corrupt",
            "--data",
            s(&clean),
            "--mode",
            "fixed",
            "-o",
            s(&out),
        ],
        vec![
            "corrupt",
            "--data",
            s(&clean),
            "--mode",
            "fixed",
            "--extra",
            "1",
            "--q",
            "0.1",
            "-o",
            s(&out),
        ],
        vec!["train", "--epochs", "many"],
        vec!["gradcheck", "--k", "40"],
    ] {
        let o = propall(&args);
        assert_eq!(
            code(&o),
            2,
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
}

#[test]
fn validation_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let partial = dir.path().join("partial.csv");
    std::fs::write(
        &partial,
        "# pll-csv v1 k=3 corruption=none\n?;0|1;1.0,2.0\n",
    )
    .unwrap();
    let out = dir.path().join("o.csv");
    let o = propall(&[
        "corrupt",
        "--data",
        s(&partial),
        "--mode",
        "fixed",
        "--extra",
        "1",
        "-o",
        s(&out),
    ]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("true label"));

    let labeled = write_labeled(dir.path(), "clean.csv", 6);
    let o = propall(&[
        "corrupt",
        "--data",
        s(&labeled),
        "--mode",
        "fixed",
        "--extra",
        "3",
        "-o",
        s(&out),
    ]);
    assert_eq!(code(&o), 3);

    // architecture does not match the four input features
    let o = propall(&[
        "train",
        "--data",
        s(&labeled),
        "--arch",
        "5,3",
        "--epochs",
        "1",
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn missing_files_exit_1() {
    let o = propall(&[
        "eval",
        "--checkpoint",
        "/nonexistent/ckpt.json",
        "--data",
        "/nonexistent/x.csv",
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn gradcheck_passes_and_the_negative_control_fails() {
    let quick = [
        "gradcheck",
        "--k",
        "6",
        "--trials",
        "20",
        "--fd-cases",
        "40",
    ];
    let o = propall(&quick);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert_eq!(
        stdout(&o).lines().filter(|l| l.starts_with("PASS")).count(),
        5
    );

    let mut control = quick.to_vec();
    control.push("--negative-control");
    let o = propall(&control);
    assert_eq!(code(&o), 4);
    assert!(stdout(&o).contains("FAIL"));

    control.push("--json");
    let o = propall(&control);
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(report["suites"]
        .as_array()
        .unwrap()
        .iter()
        .any(|s| s["passed"] == false));
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# defaults\nmode = fixed\nextra = 2\nseed = 4\n").unwrap();
    let clean = write_labeled(dir.path(), "clean.csv", 12);
    let a = dir.path().join("a.csv");
    let o = propall(&[
        "corrupt",
        "--config",
        s(&cfg),
        "--data",
        s(&clean),
        "-o",
        s(&a),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(load_pll_csv(&a)
        .unwrap()
        .candidate_sets()
        .iter()
        .all(|s| s.len() == 3));

    let b = dir.path().join("b.csv");
    let o = propall(&[
        "corrupt",
        "--config",
        s(&cfg),
        "--data",
        s(&clean),
        "--extra",
        "1",
        "-o",
        s(&b),
    ]);
    assert_eq!(code(&o), 0);
    assert!(load_pll_csv(&b)
        .unwrap()
        .candidate_sets()
        .iter()
        .all(|s| s.len() == 2));
}

fn train_into(data: &Path, out_dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--data",
        s(data),
        "--test",
        s(data),
        "--out-dir",
        s(out_dir),
    ];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    propall(&args)
}

#[test]
fn training_is_deterministic_and_eval_agrees() {
    let dir = tempfile::tempdir().unwrap();
    let toy = corrupt_toy(dir.path());
    let (r1, r2) = (dir.path().join("r1"), dir.path().join("r2"));
    for r in [&r1, &r2] {
        let o = train_into(&toy, r, &["--bn", "--seed", "3", "--eval-train"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for file in ["checkpoint.json", "history.jsonl", "history.csv"] {
        assert_eq!(
            std::fs::read(r1.join(file)).unwrap(),
            std::fs::read(r2.join(file)).unwrap(),
            "{file}"
        );
    }

    let records =
        TrainHistory::from_jsonl(&std::fs::read_to_string(r1.join("history.jsonl")).unwrap())
            .unwrap();
    let logged = records.last().unwrap().train_accuracy.unwrap();
    let report_path = dir.path().join("reports/eval.json");
    let o = propall(&[
        "eval",
        "--checkpoint",
        s(&r1.join("checkpoint.json")),
        "--data",
        s(&toy),
        "--json",
        "-o",
        s(&report_path),
    ]);
    assert_eq!(code(&o), 0);
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((report["accuracy"].as_f64().unwrap() - logged).abs() <= 1e-12);
    assert_eq!(report["samples"], 120);
    let saved: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(report_path).unwrap()).unwrap();
    assert_eq!(saved, report);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(r1.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["seed"], 3);
}

#[test]
fn other_seeds_give_other_models() {
    let dir = tempfile::tempdir().unwrap();
    let toy = corrupt_toy(dir.path());
    let (r1, r2) = (dir.path().join("r1"), dir.path().join("r2"));
    assert_eq!(code(&train_into(&toy, &r1, &["--seed", "1"])), 0);
    assert_eq!(code(&train_into(&toy, &r2, &["--seed", "2"])), 0);
    assert_ne!(
        std::fs::read(r1.join("checkpoint.json")).unwrap(),
        std::fs::read(r2.join("checkpoint.json")).unwrap()
    );
}

#[test]
fn out_dir_falls_back_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let toy = corrupt_toy(dir.path());
    let target = dir.path().join("from-env");
    let mut args = vec!["train", "--data", s(&toy)];
    args.extend_from_slice(SMALL);
    let o = Command::new(env!("CARGO_BIN_EXE_propall"))
        .args(&args)
        .env(propall_cli::OUT_DIR_ENV, &target)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(target.join("checkpoint.json").exists());
}

#[test]
fn eval_rejects_partial_label_data() {
    let dir = tempfile::tempdir().unwrap();
    let toy = corrupt_toy(dir.path());
    let run = dir.path().join("run");
    assert_eq!(code(&train_into(&toy, &run, &[])), 0);
    let unlabeled = dir.path().join("unlabeled.csv");
    let d = load_pll_csv(&toy).unwrap();
    let stripped = PllDataset::new(
        d.features().clone(),
        d.candidate_sets().to_vec(),
        vec![None; d.len()],
        3,
    )
    .unwrap();
    propall_core::datasets::save_pll_csv(&stripped, &unlabeled).unwrap();
    let o = propall(&[
        "eval",
        "--checkpoint",
        s(&run.join("checkpoint.json")),
        "--data",
        s(&unlabeled),
    ]);
    assert_eq!(code(&o), 3);
}

#[test]
fn ablate_reports_both_arms() {
    let dir = tempfile::tempdir().unwrap();
    let toy = corrupt_toy(dir.path());
    let out = dir.path().join("ablation");
    let mut args = vec![
        "ablate",
        "--data",
        s(&toy),
        "--test",
        s(&toy),
        "--seeds",
        "1,2",
        "--out-dir",
        s(&out),
    ];
    args.extend_from_slice(SMALL);
    let o = propall(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(
        text.contains("noise off") && text.contains("noise on"),
        "{text}"
    );
    let arms: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("ablation.json")).unwrap()).unwrap();
    assert_eq!(arms.as_array().unwrap().len(), 2);
    assert_eq!(arms[0]["accuracies"].as_array().unwrap().len(), 2);

    let o = propall(&[
        "ablate",
        "--data",
        s(&toy),
        "--arch",
        "4,3",
        "--out-dir",
        s(&out),
    ]);
    assert_eq!(code(&o), 2);
}
