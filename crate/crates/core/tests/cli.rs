use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn md(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_microdesign"))
        .args(args)
        .env("MICRODESIGN_THREADS", "1")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn ok(args: &[&str]) -> Output {
    let o = md(args);
    assert_eq!(code(&o), 0, "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn manifest(dir: &Path, cmd: &str) -> Value {
    let text = fs::read_to_string(dir.join(format!("manifest_{cmd}.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small labeled dataset: 6 samples at k = 8 labeled on a 16-grid.
fn labeled(tmp: &TempDir, tasks: &str) -> std::path::PathBuf {
    let d = tmp.path().join("data");
    ok(&["gen-data", "--n", "6", "--k", "8", "--seed", "3", "--out", s(&d)]);
    ok(&["label", "--data", s(&d), "--grid", "16", "--tasks", tasks]);
    d
}

fn trained(tmp: &TempDir, data: &Path, task: &str, name: &str, epochs: &str) -> std::path::PathBuf {
    let out = tmp.path().join(name);
    ok(&[
        "train", "--data", s(data), "--task", task, "--epochs", epochs, "--batch", "3", "--arch", "desk", "--data-points", "32", "--out", s(&out),
    ]);
    out
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&md(&[])), 2);
    assert_eq!(code(&md(&["bogus"])), 2);
    assert_eq!(code(&md(&["gen-data", "--n", "0", "--out", "/tmp/never"])), 2);
    assert_eq!(code(&md(&["gen-data", "--n", "3"])), 2);
    assert_eq!(code(&md(&["train", "--data", "x", "--task", "neither", "--out", "y"])), 2);
    assert_eq!(code(&md(&["--help"])), 0);
}

#[test]
fn thread_variable_is_validated() {
    let o = Command::new(env!("CARGO_BIN_EXE_microdesign"))
        .args(["gen-data", "--n", "1", "--out", "/tmp/never"])
        .env("MICRODESIGN_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn gen_data_is_byte_reproducible() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        ok(&["gen-data", "--n", "10", "--k", "16", "--seed", "7", "--out", s(d)]);
    }
    assert_eq!(fs::read(a.join("micro.u8")).unwrap(), fs::read(b.join("micro.u8")).unwrap());
    assert_eq!(fs::read(a.join("meta.json")).unwrap(), fs::read(b.join("meta.json")).unwrap());
}

#[test]
fn gen_data_manifest_records_phis() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path().join("d");
    ok(&["gen-data", "--n", "100", "--k", "8", "--seed", "1", "--out", s(&d)]);
    let m = manifest(&d, "gen-data");
    assert_eq!(m["command"], "gen-data");
    assert_eq!(m["seeds"][0], 1);
    let phis = m["config"]["phis"].as_array().unwrap();
    assert_eq!(phis.len(), 100);
    assert!(phis.iter().all(|p| (1.0..=9.0).contains(&p.as_f64().unwrap())));
    assert!(m["wall_clock_secs"].as_f64().unwrap() >= 0.0);
}

#[test]
fn non_empty_output_needs_force() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path().join("d");
    ok(&["gen-data", "--n", "2", "--k", "8", "--out", s(&d)]);
    let o = md(&["gen-data", "--n", "2", "--k", "8", "--out", s(&d)]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--force"));
    ok(&["gen-data", "--n", "3", "--k", "8", "--out", s(&d), "--force"]);
}

#[test]
fn label_is_idempotent_and_checks_grid() {
    let tmp = TempDir::new().unwrap();
    let d = labeled(&tmp, "property");
    let first = fs::read(d.join("kappa.f32")).unwrap();
    ok(&["label", "--data", s(&d), "--grid", "16", "--tasks", "property"]);
    assert_eq!(first, fs::read(d.join("kappa.f32")).unwrap());
    assert_eq!(code(&md(&["label", "--data", s(&d), "--grid", "15"])), 1);
    assert_eq!(code(&md(&["label", "--data", s(&tmp.path().join("missing"))])), 1);
    assert_eq!(manifest(&d, "label")["config"]["grid"], 16);
}

#[test]
fn train_writes_checkpoint_log_and_manifest() {
    let tmp = TempDir::new().unwrap();
    let d = labeled(&tmp, "property");
    let out = trained(&tmp, &d, "property", "ckpt", "3");
    let log = fs::read_to_string(out.join("loss_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 3);
    assert!(out.join("model.json").exists() && out.join("weights.f64").exists());
    let m = manifest(&out, "train");
    assert_eq!(m["config"]["train"]["batch_size"], 3);
    assert_eq!(m["config"]["train"]["lambda_kl"], 2.0);

    let zero = trained(&tmp, &d, "property", "zero", "0");
    assert_eq!(fs::read_to_string(zero.join("loss_log.csv")).unwrap().lines().count(), 1);

    // Unlabeled data cannot feed the data term.
    let raw = tmp.path().join("raw");
    ok(&["gen-data", "--n", "3", "--k", "8", "--out", s(&raw)]);
    let o = md(&["train", "--data", s(&raw), "--task", "property", "--epochs", "1", "--arch", "desk", "--out", s(&tmp.path().join("x"))]);
    assert_eq!(code(&o), 1);
}

#[test]
fn train_defaults() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path().join("data");
    ok(&["gen-data", "--n", "25", "--k", "8", "--seed", "3", "--out", s(&d)]);
    ok(&["label", "--data", s(&d), "--grid", "16", "--tasks", "property"]);
    let out = tmp.path().join("t");
    ok(&["train", "--data", s(&d), "--task", "property", "--epochs", "0", "--arch", "desk", "--out", s(&out)]);
    let t = &manifest(&out, "train")["config"]["train"];
    assert_eq!(t["batch_size"], 25);
    assert_eq!(t["lr"], 5e-4);
    assert_eq!(t["lambda_pde"], 0.25);
    assert_eq!(t["lambda_data"], 0.5);
    assert_eq!(t["lambda_kl"], 2.0);
    assert_eq!(t["use_labeled"], true);
}

#[test]
fn design_eval_and_plots() {
    let tmp = TempDir::new().unwrap();
    let d = labeled(&tmp, "property,field");
    let ckpt = trained(&tmp, &d, "property", "ckpt", "1");
    let p1 = tmp.path().join("p1");
    let o = ok(&[
        "design", "p1", "--checkpoint", s(&ckpt), "--target-box", "3,4,3,4", "--tau", "10", "--restarts", "3", "--steps", "2", "--oracle-grid", "16", "--out", s(&p1),
    ]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("success rate"));
    let m = manifest(&p1, "design_p1");
    assert_eq!(m["config"]["kappa_h"], serde_json::json!([3.0, 4.0]));
    assert_eq!(m["config"]["tau"], 10.0);
    assert_eq!(m["config"]["run"]["restarts"], 3);
    let report: Value = serde_json::from_str(&fs::read_to_string(p1.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["records"].as_array().unwrap().len(), 3);

    ok(&["eval", "--designs", s(&p1)]);
    assert!(p1.join("eval.json").exists());
    ok(&["plots", "--report", s(&p1), "--data", s(&d)]);
    for f in ["kappa_scatter.svg", "designs.svg", "records.csv", "summary.csv"] {
        assert!(p1.join("plots").join(f).exists(), "missing {f}");
    }
    let svg = fs::read_to_string(p1.join("plots/kappa_scatter.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("stroke=\"red\""));

    let p3 = tmp.path().join("p3");
    ok(&["design", "p3", "--checkpoint", s(&ckpt), "--restarts", "2", "--steps", "1", "--oracle-grid", "16", "--out", s(&p3)]);
    assert_eq!(manifest(&p3, "design_p3")["config"]["alpha"], 10.0);

    // Property checkpoint cannot serve field recovery.
    let o = md(&[
        "design", "p2", "--checkpoint", s(&ckpt), "--reference-data", s(&d), "--restarts", "1", "--steps", "1", "--out", s(&tmp.path().join("p2")),
    ]);
    assert_eq!(code(&o), 1);

    let field = trained(&tmp, &d, "field", "fckpt", "1");
    let p2 = tmp.path().join("p2ok");
    ok(&[
        "design", "p2", "--checkpoint", s(&field), "--reference-data", s(&d), "--reference-index", "2", "--sensors", "4", "--restarts", "2", "--steps", "1", "--oracle-grid", "16", "--out", s(&p2),
    ]);
    let r: Value = serde_json::from_str(&fs::read_to_string(p2.join("report.json")).unwrap()).unwrap();
    assert_eq!(r["target"]["sensors"].as_array().unwrap().len(), 16);
    ok(&["plots", "--report", s(&p2)]);
    assert!(p2.join("plots/reference.svg").exists());
}

#[test]
fn design_target_files() {
    let tmp = TempDir::new().unwrap();
    let d = labeled(&tmp, "property");
    let ckpt = trained(&tmp, &d, "property", "ckpt", "0");
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{ \"variant\": \"p1\", \"kappa_h\": [3.0] ").unwrap();
    let o = md(&["design", "p1", "--checkpoint", s(&ckpt), "--target", s(&bad), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(code(&o), 1);

    let good = tmp.path().join("good.json");
    fs::write(&good, r#"{ "variant": "p1", "kappa_h": [2.0, 5.0], "kappa_v": [2.5, 4.5], "run": { "restarts": 2, "steps": 1, "oracle_grid": 16 } }"#).unwrap();
    let out = tmp.path().join("g");
    ok(&["design", "p1", "--checkpoint", s(&ckpt), "--target", s(&good), "--out", s(&out)]);
    let m = manifest(&out, "design_p1");
    assert_eq!(m["config"]["kappa_v"], serde_json::json!([2.5, 4.5]));
    assert_eq!(m["config"]["run"]["restarts"], 2);

    // A p3 file handed to p1 is rejected.
    let p3 = tmp.path().join("p3.json");
    fs::write(&p3, r#"{ "variant": "p3" }"#).unwrap();
    let o = md(&["design", "p1", "--checkpoint", s(&ckpt), "--target", s(&p3), "--out", s(&tmp.path().join("q"))]);
    assert_eq!(code(&o), 1);
    // p1 without a box is an error.
    let o = md(&["design", "p1", "--checkpoint", s(&ckpt), "--out", s(&tmp.path().join("r"))]);
    assert_eq!(code(&o), 1);
}

#[test]
fn eval_rejects_empty_design_set() {
    let tmp = TempDir::new().unwrap();
    let d = labeled(&tmp, "property");
    let ckpt = trained(&tmp, &d, "property", "ckpt", "0");
    let out = tmp.path().join("p1");
    ok(&["design", "p1", "--checkpoint", s(&ckpt), "--target-box", "3,4,3,4", "--restarts", "1", "--steps", "0", "--oracle-grid", "16", "--out", s(&out)]);
    let mut r: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    r["records"] = serde_json::json!([]);
    fs::write(out.join("report.json"), serde_json::to_string(&r).unwrap()).unwrap();
    fs::write(out.join("designs.u8"), b"").unwrap();
    let o = md(&["eval", "--designs", s(&out)]);
    assert_eq!(code(&o), 1);
    assert_eq!(code(&md(&["plots", "--report", s(&out)])), 1);
}
