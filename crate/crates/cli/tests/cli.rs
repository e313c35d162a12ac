use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
[scenario]
t_limit_train_s = 12.0
t_limit_test_s = 12.0

[scenario.ic_train]
r_halfwidth_m = [1.0, 1.0, 1.0]

[network]
policy_layers = [16, 6]
value_layers = [8, 1]

[ppo]
batch_episodes = 128
minibatch = 512

[run]
seed = 3
eval_interval = 1
checkpoint_interval = 1
"#;

fn rldock(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rldock"))
        .args(args)
        .current_dir(cwd)
        .env_remove("RLDOCK_CONFIG_DIR")
        .output()
        .expect("binary runs")
}

fn setup() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    (dir, cfg)
}

fn log_updates(path: &Path) -> Vec<u64> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let headers = r.headers().unwrap().clone();
    let col = headers.iter().position(|h| h == "update").unwrap();
    r.records().map(|rec| rec.unwrap()[col].parse().unwrap()).collect()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn budget_of_two_batches_logs_two_updates_then_resumes() {
    let (dir, cfg) = setup();
    let cfg = cfg.to_str().unwrap();
    let o = rldock(&["train", "-c", cfg, "--budget", "256", "-o", "run"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let run = dir.path().join("run");
    assert_eq!(log_updates(&run.join("train_log.csv")), vec![1, 2]);
    for f in ["latest.json", "best.json", "manifest.json"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["config"]["ppo"]["batch_episodes"], 128);

    let o = rldock(&["train", "-c", cfg, "--budget", "384", "-o", "run", "--resume", "run/latest.json"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(log_updates(&run.join("train_log.csv")), vec![1, 2, 3]);
}

#[test]
fn resume_with_a_different_config_is_refused() {
    let (dir, cfg) = setup();
    let cfg = cfg.to_str().unwrap();
    let o = rldock(&["train", "-c", cfg, "--budget", "128", "-o", "run"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let o = rldock(&["train", "-c", cfg, "--seed", "4", "--budget", "256", "-o", "run", "--resume", "run/latest.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("config"), "{}", stderr(&o));
}

#[test]
fn evaluate_writes_report_and_requested_trajectories() {
    let (dir, cfg) = setup();
    let cfg = cfg.to_str().unwrap();
    assert!(rldock(&["train", "-c", cfg, "--budget", "128", "-o", "run"], dir.path()).status.success());
    let o = rldock(
        &["evaluate", "-c", cfg, "--checkpoint", "run/latest.json", "-n", "8", "-o", "ev", "--export-trajectories", "5"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let ev = dir.path().join("ev");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(ev.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["trials"], 8);
    let csvs = fs::read_dir(&ev).unwrap().filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("trajectory_")).count();
    assert_eq!(csvs, 5);
    let rows = csv::Reader::from_path(ev.join("trajectory_0000.csv")).unwrap().records().count();
    assert_eq!(rows, 13);

    // A different test seed is allowed; it only changes the initial conditions.
    let o = rldock(&["evaluate", "-c", cfg, "--seed", "11", "--checkpoint", "run/latest.json", "-n", "2", "-o", "ev2"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let (dir, cfg) = setup();
    let cfg = cfg.to_str().unwrap();
    assert!(rldock(&["train", "-c", cfg, "--budget", "128", "-o", "run"], dir.path()).status.success());
    let path = dir.path().join("run/latest.json");
    let text = fs::read_to_string(&path).unwrap();
    fs::write(&path, &text[..text.len() / 3]).unwrap();
    let o = rldock(&["evaluate", "-c", cfg, "--checkpoint", "run/latest.json", "-n", "1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("checkpoint"), "{}", stderr(&o));
}

#[test]
fn config_errors_carry_line_context() {
    let (dir, _) = setup();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[ppo]\nepsilon = 0.2\nepsilonn = 0.3\n").unwrap();
    let o = rldock(&["lqr-design", "-c", bad.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("line 3") && msg.contains("epsilonn"), "{msg}");

    let o = rldock(&["lqr-design", "-c", "missing.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_with_one() {
    let (dir, _) = setup();
    assert_eq!(rldock(&["train", "--no-such-flag"], dir.path()).status.code(), Some(1));
    assert_eq!(rldock(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(rldock(&["train", "--budget", "0"], dir.path()).status.code(), Some(1));
    assert_eq!(rldock(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn lqr_design_writes_gain_reference_and_trace() {
    let (dir, _) = setup();
    let o = rldock(&["lqr-design", "-o", "lqr"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let lqr = dir.path().join("lqr");
    let gain: serde_json::Value = serde_json::from_str(&fs::read_to_string(lqr.join("gain.json")).unwrap()).unwrap();
    let arrival = gain["arrival_s"].as_f64().unwrap();
    assert!((arrival - 105.0).abs() <= 2.0, "{arrival}");
    assert_eq!(gain["gain"].as_array().unwrap().len(), 3);
    assert!(gain["riccati_residual"].as_f64().unwrap() < 1e-8);
    let rows = csv::Reader::from_path(lqr.join("reference.csv")).unwrap().records().count();
    assert_eq!(rows, 251);
    assert!(!fs::read_to_string(lqr.join("tuning.txt")).unwrap().is_empty());
}

#[test]
fn rollout_without_policy_flies_the_reference() {
    let (dir, _) = setup();
    let o = rldock(&["rollout", "--index", "2", "-o", "out/traj.csv"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let mut r = csv::Reader::from_path(dir.path().join("out/traj.csv")).unwrap();
    assert_eq!(r.headers().unwrap().len(), 34);
    assert!(r.records().count() >= 2);
}
