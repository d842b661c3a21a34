use std::path::Path;
use std::process::{Command, Output};

fn msip(args: &[&str], env_seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_msip"));
    cmd.args(args).env_remove("MSIP_SEED");
    if let Some(s) = env_seed {
        cmd.env("MSIP_SEED", s);
    }
    cmd.output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

const SMALL: &str = r#"{
  "target": "gmm5-aniso-2d",
  "algorithm": {"name": "msip-f", "iterations": 20},
  "particles": {"count": 5, "init_mean": [0.0, 0.0], "init_cov_scale": 16.0},
  "metrics": {"every_n_iters": 5},
  "trials": {"count": 2},
  "output": {"formats": ["csv", "json", "svg"]}
}"#;

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn unknown_subcommand_prints_usage_and_exits_1() {
    let out = msip(&["frobnicate"], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(msip(&[], None).status.code(), Some(1));
    assert_eq!(msip(&["--help"], None).status.code(), Some(0));
}

#[test]
fn config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.json", r#"{"target": "gmm", "dim": 2, "algorithm": "msip-f", "extra": 1}"#);
    let out = msip(&["run", &bad], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("extra"));
    let missing = dir.path().join("missing.json");
    assert_eq!(msip(&["run", missing.to_str().unwrap()], None).status.code(), Some(1));
    let cfg = write_config(dir.path(), "ok.json", SMALL);
    assert_eq!(msip(&["run", &cfg], Some("seven")).status.code(), Some(1));
}

#[test]
fn numerical_failure_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    // every particle starts at the same point and λ = 0: singular Gram matrix
    let cfg = write_config(
        dir.path(),
        "singular.json",
        r#"{"target": "gmm", "dim": 2, "algorithm": {"name": "msip-f", "lambda": 0.0, "iterations": 3},
            "particles": {"count": 3, "init_cov_scale": 0.0}, "trials": {"count": 2}}"#,
    );
    let out_dir = dir.path().join("out");
    let out = msip(&["run", &cfg, "--out", out_dir.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn seeded_runs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", SMALL);
    let run = |name: &str, seed: &str, env: Option<&str>| {
        let out_dir = dir.path().join(name);
        let out = msip(&["run", &cfg, "--seed", seed, "--out", out_dir.to_str().unwrap(), "--quiet"], env);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(out.stdout.is_empty());
        out_dir
    };
    let strip = |p: &Path| msip_harness::acceptance::strip_wall_ms(&read(&p.join("metrics.csv")));
    let a = run("a", "7", None);
    let b = run("b", "7", None);
    let c = run("c", "8", None);
    let d = run("d", "1", Some("8"));
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(read(&a.join("trial_000.svg")), read(&b.join("trial_000.svg")));
    assert_ne!(strip(&a), strip(&c));
    // MSIP_SEED wins over --seed
    assert_eq!(strip(&c), strip(&d));
    let echoed: serde_json::Value = serde_json::from_str(&read(&a.join("summary.json"))).unwrap();
    assert_eq!(echoed["config_echo"]["trials"]["base_seed"], 7);
}

#[test]
fn plot_redraws_a_result_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", &SMALL.replace(r#""csv", "json", "svg""#, r#""csv""#));
    let out_dir = dir.path().join("res");
    assert_eq!(msip(&["run", &cfg, "--out", out_dir.to_str().unwrap(), "--quiet"], None).status.code(), Some(0));
    assert!(!out_dir.join("trial_000.svg").exists());
    let out = msip(&["plot", out_dir.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(0));
    assert!(out_dir.join("trial_001.svg").exists());
    assert_eq!(msip(&["plot", dir.path().join("nowhere").to_str().unwrap()], None).status.code(), Some(1));
}

#[test]
fn grad_check_and_invariance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "gmm.json", r#"{"target": "gmm", "dim": 3, "algorithm": "msip-f", "particles": {"count": 8}}"#);
    let out = msip(&["grad-check", &cfg], None);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    let err: f64 = text.trim().rsplit(' ').next().unwrap().parse().unwrap();
    assert!(err <= 1e-5, "{text}");
    let out = msip(&["invariance", &cfg], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let funnel = write_config(dir.path(), "funnel.json", r#"{"target": "funnel", "dim": 3, "algorithm": "cbs"}"#);
    assert_eq!(msip(&["grad-check", &funnel], None).status.code(), Some(1));
    assert_eq!(msip(&["invariance", &funnel], None).status.code(), Some(0));
}
