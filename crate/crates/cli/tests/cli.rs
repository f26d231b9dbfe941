//! End-to-end runs of the `droughtnet` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn droughtnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_droughtnet"))
        .args(args)
        .env_remove("DROUGHTNET_OUT")
        .output()
        .expect("binary runs")
}

fn short_config(dir: &Path, days: u64) -> String {
    let path = dir.join("scenario.toml");
    fs::write(&path, format!("horizon_s = {}\n\n[link]\nloss_prob = 0.1\n", days * 86_400)).unwrap();
    path.to_str().unwrap().to_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn plan_writes_fifty_node_placement() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("plan");
    let o = droughtnet(&["plan", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("placement.json").exists());
    assert_eq!(stdout(&o).matches("10 nodes including the sink").count(), 5);
}

#[test]
fn run_then_replay_and_detect_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), 2);
    let out = dir.path().join("run");
    let o = droughtnet(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--trace"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["central_db.csv", "energy.csv", "run_report.json", "trace.tsv", "placement.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    assert!(stdout(&o).contains("conserved true"));

    let o = droughtnet(&["replay", "--from", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
    assert!(!stdout(&o).contains("DIFFERS"));

    let energy = out.join("energy.csv");
    let mut text = fs::read_to_string(&energy).unwrap();
    text.push_str("999,1,0,0,0,0,0,0,0,0\n");
    fs::write(&energy, text).unwrap();
    let o = droughtnet(&["replay", "--from", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("energy.csv: DIFFERS"));
}

#[test]
fn classify_reads_an_exported_database() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), 2);
    let out = dir.path().join("run");
    assert!(droughtnet(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let db = out.join("central_db.csv");
    let again = dir.path().join("classified");
    let o = droughtnet(&["classify", "--db", db.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("region 1"));
}

#[test]
fn routing_and_seed_flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), 1);
    let out = dir.path().join("dd");
    let o = droughtnet(&[
        "run", "--config", &cfg, "--out", out.to_str().unwrap(), "--routing", "diffusion", "--seed", "9",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("seed 9 diffusion"));
}

#[test]
fn batch_runs_use_consecutive_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), 1);
    let out = dir.path().join("batch");
    let o = droughtnet(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "5", "--runs", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("seed-5/run_report.json").exists());
    assert!(out.join("seed-6/run_report.json").exists());
}

#[test]
fn out_directory_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_droughtnet"))
        .args(["plan"])
        .env("DROUGHTNET_OUT", &out)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(out.join("placement.json").exists());
}

#[test]
fn invalid_config_fails_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "seed = 1\nreporting_period_s = \"soon\"\n").unwrap();
    let o = droughtnet(&["run", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));

    fs::write(&path, "reporting_period_s = 60\n").unwrap();
    let o = droughtnet(&["plan", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
