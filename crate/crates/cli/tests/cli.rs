use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_greenhouse"))
}

fn repo(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join(rel)
}

#[test]
fn validate_prints_per_channel_maxima() {
    let out = bin()
        .args(["validate"])
        .arg(repo("fixtures/table2.csv"))
        .arg(repo("fixtures/table3.csv"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("rows compared: 10"));
    assert!(text
        .lines()
        .any(|l| l.starts_with("soil_moisture") && l.contains(" 11 ")));
}

#[test]
fn validate_limits_set_the_exit_code() {
    let run = |limit: &str| {
        bin()
            .args(["validate"])
            .arg(repo("fixtures/table2.csv"))
            .arg(repo("fixtures/table3.csv"))
            .args(["--max", limit])
            .output()
            .unwrap()
            .status
    };
    assert!(run("co2=3").success());
    assert_eq!(run("air_temp=1.1").code(), Some(2));
    assert_eq!(run("nope=1").code(), Some(2));
}

#[test]
fn invalid_scenario_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"duration_ticks": 0, "rng_seed": 1}"#).unwrap();
    let out = bin()
        .arg("run")
        .arg(&bad)
        .arg("--out")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("duration_ticks"));
}

#[test]
fn replay_run_then_report_from_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let status = bin()
        .arg("run")
        .arg(repo("scenarios/table2_replay.json"))
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    for f in [
        "runlog.jsonl",
        "records.jsonl",
        "records.csv",
        "summary.txt",
        "timeseries.csv",
        "decisions.csv",
        "alerts.jsonl",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let again = dir.path().join("again");
    let status = bin()
        .arg("report")
        .arg(out.join("runlog.jsonl"))
        .arg(&again)
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    assert_eq!(
        std::fs::read(out.join("summary.txt")).unwrap(),
        std::fs::read(again.join("summary.txt")).unwrap()
    );
}

#[test]
fn seed_flag_overrides_the_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let text = bin()
        .arg("run")
        .arg(repo("scenarios/table2_replay.json"))
        .args(["--seed", "99", "--out"])
        .arg(&out)
        .output()
        .unwrap()
        .stdout;
    assert!(String::from_utf8(text).unwrap().contains("(seed 99)"));
}

#[test]
fn missing_runlog_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .arg("report")
        .arg(dir.path().join("none.jsonl"))
        .arg(dir.path())
        .output()
        .unwrap()
        .status;
    assert_eq!(status.code(), Some(2));
}
