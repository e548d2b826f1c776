use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ope(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ope"))
        .args(args)
        .env_remove("OPE_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn simulate(dir: &Path, preset: &str, n: usize, seed: u64, name: &str) -> String {
    let path = dir.join(name);
    let p = path.to_str().unwrap();
    ok(&ope(&[
        "simulate",
        "--preset",
        preset,
        "--n",
        &n.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        p,
    ]));
    p.to_string()
}

#[test]
fn presets_lists_flip2() {
    let out = ok(&ope(&["presets"]));
    assert!(out.lines().any(|l| l.starts_with("flip2 ")));
    assert!(out.lines().any(|l| l.starts_with("rankflip2x2 ")));
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulate(dir.path(), "flip2", 1000, 7, "a.jsonl");
    let b = simulate(dir.path(), "flip2", 1000, 7, "b.jsonl");
    let c = simulate(dir.path(), "flip2", 1000, 8, "c.jsonl");
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 1001);
    assert!(text.lines().next().unwrap().contains("\"_meta\""));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(format!("{a}.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["master_seed"], 7);
    assert_eq!(manifest["environment"], "flip2");
}

#[test]
fn unknown_preset_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = ope(&[
        "simulate",
        "--preset",
        "nope",
        "--n",
        "10",
        "--out",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));
}

#[test]
fn evaluate_three_estimators() {
    let dir = tempfile::tempdir().unwrap();
    let p = simulate(dir.path(), "flip2", 1000, 7, "d.jsonl");
    let doc: Value = serde_json::from_str(&ok(&ope(&[
        "evaluate",
        "--in",
        &p,
        "--estimators",
        "ips,snips,beta-star-ips",
    ])))
    .unwrap();
    let est = doc["estimates"].as_array().unwrap();
    assert_eq!(est.len(), 3);
    assert_eq!(est[0]["estimator"], "ips");
    assert_eq!(est[0]["value"], doc["moments"]["mean_wr"]);
    let snips =
        doc["moments"]["mean_wr"].as_f64().unwrap() / doc["moments"]["mean_w"].as_f64().unwrap();
    assert!((est[1]["value"].as_f64().unwrap() - snips).abs() < 1e-15);
    assert_eq!(est[2]["baseline"], doc["beta_star_hat"]);
}

#[test]
fn gap_needs_true_value() {
    let dir = tempfile::tempdir().unwrap();
    let p = simulate(dir.path(), "flip2", 200, 1, "d.jsonl");
    for flag in ["--gap", "--remainder"] {
        let out = ope(&["evaluate", "--in", &p, flag]);
        assert_eq!(out.status.code(), Some(2));
        assert!(String::from_utf8_lossy(&out.stderr).contains("true value"));
    }
}

#[test]
fn gap_with_true_value() {
    let dir = tempfile::tempdir().unwrap();
    let p = simulate(dir.path(), "flip2", 1000, 7, "d.jsonl");
    let doc: Value = serde_json::from_str(&ok(&ope(&[
        "evaluate",
        "--in",
        &p,
        "--gap",
        "--true-value",
        "0.26",
    ])))
    .unwrap();
    let m = &doc["moments"];
    let (vw, c) = (
        m["var_w"].as_f64().unwrap(),
        m["cov_w_wr"].as_f64().unwrap(),
    );
    let expected = (0.26 * vw - c).powi(2) / (1000.0 * vw);
    let got = doc["variance_gap"]["gap_delta"].as_f64().unwrap();
    assert!(
        (got - expected).abs() <= 1e-12 * expected,
        "{got} vs {expected}"
    );
}

#[test]
fn evaluate_bound_override_and_line_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("raw.jsonl");
    fs::write(
        &p,
        "{\"context\":\"u1\",\"action\":\"a\",\"p_log\":0.5,\"p_tgt\":0.5,\"reward\":1.0}\n\
         {\"context\":\"u2\",\"action\":\"a\",\"p_log\":0.5,\"p_tgt\":1.0,\"reward\":0.0}\n\
         {\"context\":\"u3\",\"action\":\"a\",\"p_log\":0.0,\"p_tgt\":1.0,\"reward\":0.0}\n",
    )
    .unwrap();
    let p = p.to_str().unwrap();
    assert_eq!(ope(&["evaluate", "--in", p]).status.code(), Some(2));
    let out = ope(&[
        "evaluate",
        "--in",
        p,
        "--reward-bound",
        "1",
        "--weight-bound",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("line 3"),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(
        ope(&["evaluate", "--in", "/nonexistent/x.jsonl"])
            .status
            .code(),
        Some(4)
    );
}

#[test]
fn evaluate_ranked_log() {
    let dir = tempfile::tempdir().unwrap();
    let p = simulate(dir.path(), "rankflip2x2", 500, 3, "r.jsonl");
    let doc: Value = serde_json::from_str(&ok(&ope(&[
        "evaluate",
        "--in",
        &p,
        "--estimators",
        "ipm,snipm,beta-perp-star-ipm",
        "--gap",
        "--true-value",
        "0.26,0.26",
    ])))
    .unwrap();
    let est = doc["estimates"].as_array().unwrap();
    let per: Vec<f64> = est[2]["per_position"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(per.len(), 2);
    assert_eq!(est[2]["value"].as_f64().unwrap(), per[0] + per[1]);
    assert_eq!(doc["variance_gap"].as_array().unwrap().len(), 2);
    let out = ope(&[
        "evaluate",
        "--in",
        &p,
        "--estimators",
        "ipm",
        "--gap",
        "--true-value",
        "0.26",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

const STUDY_HEAD: &str = "replicates = 200\nseed = 11\n";

fn write_study(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, format!("{STUDY_HEAD}{body}")).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn decay_study_writes_csv_and_slope() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_study(
        dir.path(),
        "decay.toml",
        "kind = \"decay\"\nn_grid = [100, 400, 1600, 6400]\n[environment]\npreset = \"flip2\"\n",
    );
    let out_dir = dir.path().join("out");
    ok(&ope(&[
        "study",
        &cfg,
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]));
    let csv = fs::read_to_string(out_dir.join("decay.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("estimator,n,mean,bias,variance,mse,se"));
    assert_eq!(lines.count(), 4);
    let doc: Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("decay.json")).unwrap()).unwrap();
    assert_eq!(doc["kind"], "decay");
    assert!(doc["result"]["slope"].as_f64().unwrap() < -1.0);
    assert_eq!(doc["manifest"]["master_seed"], 11);
    assert!(doc["result"]["true_value"].as_f64().unwrap() - 0.26 < 1e-12);
}

#[test]
fn dominance_on_constant_reward_is_precondition_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_study(
        dir.path(),
        "dom.toml",
        "kind = \"dominance\"\nn_grid = [400]\n[environment]\npreset = \"constant2\"\n",
    );
    let out = ope(&["study", &cfg, "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!dir.path().join("dom.csv").exists());
}

#[test]
fn mc_study_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let body = "kind = \"mc\"\nn_grid = [400, 800]\nestimators = [\"ips\", \"snips\", \"beta-ips:0.1925\", \"beta-star-ips\"]\n[environment]\npreset = \"flip2\"\n";
    let cfg = write_study(dir.path(), "mc.toml", body);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&ope(&["study", &cfg, "--out-dir", a.to_str().unwrap()]));
    // Output directory from the environment, with a different thread count.
    let cfg2 = write_study(dir.path(), "mc.toml", &format!("threads = 1\n{body}"));
    let out = Command::new(env!("CARGO_BIN_EXE_ope"))
        .args(["study", &cfg2])
        .env("OPE_OUT_DIR", &b)
        .output()
        .unwrap();
    ok(&out);
    assert_eq!(
        fs::read(a.join("mc.csv")).unwrap(),
        fs::read(b.join("mc.csv")).unwrap()
    );
    let ja: Value = serde_json::from_str(&fs::read_to_string(a.join("mc.json")).unwrap()).unwrap();
    let jb: Value = serde_json::from_str(&fs::read_to_string(b.join("mc.json")).unwrap()).unwrap();
    assert_eq!(ja["result"], jb["result"]);
}

#[test]
fn schema_error_names_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_study(
        dir.path(),
        "bad.toml",
        "kind = \"mc\"\nn_grid = \"big\"\n[environment]\npreset = \"flip2\"\n",
    );
    let out = ope(&["study", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_grid"));
}

#[test]
fn simulate_from_inline_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("env.toml");
    fs::write(
        &cfg,
        "[environment.bandit]\ncontext_probs = [0.5, 0.5]\nreward_means = [[0.8, 0.2], [0.1, 0.6]]\n\
         logging = [[0.7, 0.3], [0.5, 0.5]]\ntarget = [[0.2, 0.8], [0.9, 0.1]]\n",
    )
    .unwrap();
    let out = dir.path().join("d.jsonl");
    ok(&ope(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--n",
        "50",
        "--out",
        out.to_str().unwrap(),
    ]));
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 51);
    let m: Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("d.jsonl.manifest.json")).unwrap(),
    )
    .unwrap();
    assert!(m["environment"].as_str().unwrap().starts_with("inline:"));
}
