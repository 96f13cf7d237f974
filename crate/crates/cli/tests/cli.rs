use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn invknit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_invknit"))
        .args(args)
        .env_remove("INVKNIT_SEED")
        .output()
        .unwrap()
}

fn summary(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    assert_eq!(text.lines().count(), 1, "{text}");
    serde_json::from_str(&text).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn small_build(dir: &Path, config: &Path) -> Output {
    invknit(&[
        "dataset",
        "build",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ])
}

fn write(path: PathBuf, text: &str) -> PathBuf {
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn missing_inference_checkpoint_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let out = invknit(&[
        "predict",
        "--scenario",
        "4",
        "--yarn",
        "sj",
        "--input",
        tmp.path().to_str().unwrap(),
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--infer-ckpt"), "{}", stderr(&out));
}

#[test]
fn usage_and_runtime_errors_have_distinct_codes() {
    assert_eq!(invknit(&["predict", "--scenario", "5"]).status.code(), Some(1));
    assert_eq!(invknit(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(invknit(&["--help"]).status.code(), Some(0));

    let out = invknit(&["inspect", "--ckpt", "/nonexistent/ckpt.iknt"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("error [io]"), "{}", stderr(&out));

    let tmp = TempDir::new().unwrap();
    let bad = write(tmp.path().join("bad.json"), r#"{"sj": 2, "colour": "red"}"#);
    let out = small_build(&tmp.path().join("d"), &bad);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("colour"), "{}", stderr(&out));
}

#[test]
fn scenario_four_needs_a_yarn_and_true_fronts() {
    let tmp = TempDir::new().unwrap();
    let p = tmp.path().to_str().unwrap();
    let out = invknit(&["predict", "--scenario", "4", "--infer-ckpt", p, "--input", p, "--out", p]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--yarn"));
    let out = invknit(&[
        "predict", "--scenario", "4", "--infer-ckpt", p, "--yarn", "mj", "--input-source", "frompred", "--input", p,
        "--out", p,
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("fromtrue"));
}

#[test]
fn seeded_builds_are_reproducible_and_the_env_seed_wins() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path().join("ds.json"), r#"{"seed": 3, "sj": 6, "mj": 4}"#);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let sa = summary(&small_build(&a, &cfg));
    summary(&small_build(&b, &cfg));
    assert_eq!(sa["samples"], 10);
    assert_eq!(
        std::fs::read(a.join("manifest.json")).unwrap(),
        std::fs::read(b.join("manifest.json")).unwrap()
    );

    let c = tmp.path().join("c");
    let out = Command::new(env!("CARGO_BIN_EXE_invknit"))
        .args(["dataset", "build", "--config", cfg.to_str().unwrap(), "--out", c.to_str().unwrap()])
        .env("INVKNIT_SEED", "99")
        .output()
        .unwrap();
    assert_eq!(summary(&out)["seed"], 99);
    assert_ne!(
        std::fs::read(a.join("manifest.json")).unwrap(),
        std::fs::read(c.join("manifest.json")).unwrap()
    );
}

#[test]
fn train_predict_inspect_and_eval_end_to_end() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    let data = root.join("data");
    summary(&small_build(&data, &write(root.join("ds.json"), r#"{"seed": 1, "sj": 8, "mj": 2}"#)));

    let train_cfg = format!(
        r#"{{"model": "infer_2lyr", "data": {:?}, "dataset": "sj", "max_iter": 3, "batch_size": 2}}"#,
        data.to_str().unwrap()
    );
    let run = root.join("run");
    let s = summary(&invknit(&[
        "train",
        "--phase",
        "inference",
        "--config",
        write(root.join("train.json"), &train_cfg).to_str().unwrap(),
        "--checkpoint-dir",
        run.to_str().unwrap(),
    ]));
    assert_eq!(s["steps"], 3);
    let ckpt = s["checkpoint"].as_str().unwrap().to_string();

    let info = summary(&invknit(&["inspect", "--ckpt", &ckpt]));
    let store = invknit::models::load_checkpoint(&ckpt).unwrap();
    assert_eq!(info["kind"], "infer_2lyr");
    assert_eq!(info["parameters"].as_u64().unwrap() as usize, store.count_parameters());

    let pred = root.join("pred");
    let p = summary(&invknit(&[
        "predict",
        "--scenario",
        "4",
        "--yarn",
        "sj",
        "--infer-ckpt",
        &ckpt,
        "--input",
        data.to_str().unwrap(),
        "--out",
        pred.to_str().unwrap(),
    ]));
    assert!(p["predictions"].as_u64().unwrap() > 0);
    assert!(pred.join("report.json").is_file());

    let report = root.join("eval/report.json");
    let e = summary(&invknit(&[
        "eval",
        "--pred",
        pred.to_str().unwrap(),
        "--truth",
        data.to_str().unwrap(),
        "--map",
        data.join("maps/complete.csv").to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]));
    assert_eq!(e["samples"], p["predictions"]);
    assert!((e["macro_f1"].as_f64().unwrap() - p["macro_f1"].as_f64().unwrap()).abs() < 1e-12);
    assert!(report.is_file() && root.join("eval/report.confusion.csv").is_file());
}
