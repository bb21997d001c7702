use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cxrnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cxrnet")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_config(dir: &Path, json: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, json).unwrap();
    path.display().to_string()
}

/// A few-second configuration: 100 images at 16×16, two epochs.
const SMALL: &str = r#"{
  "network": {"init_features": 8, "growth_rate": 4, "block_layers": [2, 2], "compression": 0.5,
              "bottleneck_factor": 4, "input_channels": 1, "input_size": 16, "num_classes": 2,
              "bn_eps": 1e-5, "bn_momentum": 0.9},
  "train": {"epochs": 2, "batch_size": 10, "learning_rate": 0.001},
  "synthetic": {"side": 16, "counts": [60, 20, 20], "positive_fraction": 0.3, "radius": [2.0, 3.0]}
}"#;

#[test]
fn params_prints_preset_counts() {
    let out = cxrnet(&["params", "--preset", "densenet121-paper"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "trainable=6955906 non_trainable=83648\n");

    let out = cxrnet(&["params", "--preset", "tiny", "--trace"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l == "features 1x16x4x4"), "{text}");
}

#[test]
fn usage_errors_exit_1() {
    for args in [
        &["train"][..],
        &["evaluate", "--cohort", "x.csv"],
        &["params"],
        &["params", "--preset", "resnet"],
        &["bogus"],
        &["train", "--seed", "minus-one"],
        &["prepare", "--uncertain", "maybe"],
    ] {
        let out = cxrnet(args);
        assert_eq!(code(&out), 1, "{args:?}: {}", stderr(&out));
        assert!(stderr(&out).starts_with("error:"), "{args:?}: {}", stderr(&out));
    }
    let out = cxrnet(&["train"]);
    assert!(stderr(&out).contains("--cohort") && stderr(&out).contains("Usage:"));
}

#[test]
fn help_and_version_exit_0() {
    assert_eq!(code(&cxrnet(&["--help"])), 0);
    assert_eq!(code(&cxrnet(&["--version"])), 0);
    assert_eq!(code(&cxrnet(&["train", "--help"])), 0);
}

#[test]
fn config_file_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"epochs": 3}"#);
    assert_eq!(code(&cxrnet(&["params", "--config", &cfg])), 1);
    let missing = dir.path().join("absent.json").display().to_string();
    assert_eq!(code(&cxrnet(&["params", "--config", &missing])), 2);
}

#[test]
fn missing_and_malformed_inputs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out").display().to_string();
    let out = cxrnet(&["train", "--cohort", "/definitely/not/here.csv", "--out", &out_dir]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(!dir.path().join("out").exists());

    let manifest = dir.path().join("manifest.csv");
    fs::write(&manifest, "Path,Sex\nx.png,Male\n").unwrap();
    let out = cxrnet(&["prepare", "--manifest", &manifest.display().to_string(), "--out", &out_dir]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).starts_with("error:"));
}

#[test]
fn divergent_training_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("\"learning_rate\": 0.001", "\"learning_rate\": 1e38"));
    let data = dir.path().join("data").display().to_string();
    assert_eq!(code(&cxrnet(&["synth", "--config", &cfg, "--out", &data])), 0);
    let cohort = dir.path().join("data/cohort.csv").display().to_string();
    let train_dir = dir.path().join("train").display().to_string();
    let out = cxrnet(&["train", "--config", &cfg, "--cohort", &cohort, "--out", &train_dir]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("error: non-finite"), "{}", stderr(&out));
}

#[test]
fn synth_prepare_train_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let p = |name: &str| dir.path().join(name).display().to_string();

    let out = cxrnet(&["synth", "--config", &cfg, "--seed", "4", "--out", &p("data")]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let out = cxrnet(&[
        "prepare",
        "--config",
        &cfg,
        "--seed",
        "4",
        "--manifest",
        &p("data/manifest.csv"),
        "--split-unit",
        "per_patient",
        "--uncertain",
        "as_negative",
        "--out",
        &p("prep"),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("1270") && table.contains("9189") && table.contains("9186"), "{table}");
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(p("prep/cohort.json")).unwrap()).unwrap();
    assert_eq!(summary["split_unit"], "per_patient");
    assert_eq!(summary["uncertain"], "as_negative");
    assert_eq!(summary["seed"], 4);
    let total: u64 = ["train", "val", "test"]
        .iter()
        .map(|s| {
            summary["counts"][s]["positive"].as_u64().unwrap() + summary["counts"][s]["negative"].as_u64().unwrap()
        })
        .sum();
    assert_eq!(total, 100);

    let out =
        cxrnet(&["train", "--config", &cfg, "--seed", "4", "--cohort", &p("prep/cohort.csv"), "--out", &p("train")]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(out.stdout.is_empty());
    assert_eq!(stderr(&out).lines().filter(|l| l.starts_with("epoch ")).count(), 2);
    let history = fs::read_to_string(p("train/history.csv")).unwrap();
    assert_eq!(history.lines().next(), Some("epoch,train_loss,val_loss,is_best"));
    assert_eq!(history.lines().count(), 3);

    let out = cxrnet(&[
        "evaluate",
        "--config",
        &cfg,
        "--checkpoint",
        &p("train/checkpoint.ckpt"),
        "--cohort",
        &p("prep/cohort.csv"),
        "--out",
        &p("eval"),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(p("eval/report.json")).unwrap()).unwrap();
    assert_eq!(report["threshold_source"], "validation");
    assert_eq!(report["seed"], 4);
    assert_eq!(report["network"]["input_size"], 16);
    assert_eq!(report["n_pos"].as_u64().unwrap() + report["n_neg"].as_u64().unwrap(), 20);
    let roc = fs::read_to_string(p("eval/roc.csv")).unwrap();
    assert_eq!(roc.lines().take(2).collect::<Vec<_>>(), ["threshold,fpr,tpr", "inf,0.0,0.0"]);
    assert!(roc.lines().last().unwrap().ends_with(",1.0,1.0"), "{roc}");
    assert!(fs::read_to_string(p("eval/roc.svg")).unwrap().starts_with("<svg"));

    let out = cxrnet(&[
        "evaluate",
        "--config",
        &cfg,
        "--checkpoint",
        &p("train/checkpoint.ckpt"),
        "--cohort",
        &p("prep/cohort.csv"),
        "--threshold",
        "0.5",
        "--objective",
        "positive",
        "--out",
        &p("eval_fixed"),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let fixed: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(p("eval_fixed/report.json")).unwrap()).unwrap();
    assert_eq!((fixed["threshold"].as_f64(), &fixed["threshold_source"]), (Some(0.5), &serde_json::json!("fixed")));
    assert_eq!(fixed["auc"], report["auc"]);
    assert_eq!(fixed["objective"], "positive");

    let out = cxrnet(&[
        "evaluate",
        "--checkpoint",
        &p("train/checkpoint.ckpt"),
        "--cohort",
        &p("prep/cohort.csv"),
        "--threshold",
        "1.5",
        "--out",
        &p("eval_bad"),
    ]);
    assert_eq!(code(&out), 1);

    let mut top: Vec<String> =
        fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    top.sort();
    assert_eq!(top, ["config.json", "data", "eval", "eval_fixed", "prep", "train"]);
    let mut train_files: Vec<String> =
        fs::read_dir(p("train")).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    train_files.sort();
    assert_eq!(train_files, ["checkpoint.ckpt", "history.csv", "run_config.json"]);
}

#[test]
fn recorded_config_reproduces_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let p = |name: &str| dir.path().join(name).display().to_string();
    assert_eq!(code(&cxrnet(&["synth", "--config", &cfg, "--seed", "2", "--out", &p("data")])), 0);
    let out = cxrnet(&["train", "--config", &cfg, "--seed", "2", "--cohort", &p("data/cohort.csv"), "--out", &p("a")]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = cxrnet(&["train", "--config", &p("a/run_config.json"), "--out", &p("b")]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for f in ["checkpoint.ckpt", "history.csv"] {
        assert_eq!(
            fs::read(dir.path().join("a").join(f)).unwrap(),
            fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
}
