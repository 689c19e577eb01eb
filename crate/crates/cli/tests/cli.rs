use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn holonsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_holonsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn text(o: &Output) -> String {
    format!(
        "{}\n{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    )
}

fn run_into(dir: &Path, extra: &[&str]) -> Output {
    let out = dir.to_str().unwrap();
    let mut args = vec!["run", "--out", out];
    args.extend_from_slice(extra);
    holonsim(&args)
}

fn log_lines(dir: &Path) -> Vec<Value> {
    std::fs::read_to_string(dir.join("log.ndjson"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn write_log(path: &Path, records: &[Value]) {
    let body: String = records.iter().map(|r| format!("{r}\n")).collect();
    std::fs::write(path, body).unwrap();
}

#[test]
fn scripted_fig5_run_verifies_against_the_template() {
    let dir = TempDir::new().unwrap();
    let o = run_into(dir.path(), &["--scenario", "fig5-demo", "--script", "fig5-approve"]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    for f in ["log.ndjson", "metrics.json", "snapshot.json", "scenario.json", "verify.json"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let log = dir.path().join("log.ndjson");
    let v = holonsim(&["verify", log.to_str().unwrap(), "--template", "fig5-template"]);
    assert_eq!(v.status.code(), Some(0), "{}", text(&v));
    assert!(text(&v).contains("21/21 matched"));

    let j = holonsim(&["verify", log.to_str().unwrap(), "--json"]);
    let report: Value = serde_json::from_slice(&j.stdout).unwrap();
    assert_eq!(report["air_legs_started"], 1);
    assert_eq!(report["findings"].as_array().unwrap().len(), 0);
}

#[test]
fn unattended_fig5_falls_back_to_ground() {
    let dir = TempDir::new().unwrap();
    let o = run_into(dir.path(), &["--scenario", "fig5-demo"]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let records = log_lines(dir.path());
    assert!(records
        .iter()
        .any(|r| r["kind"] == "gate_outcome" && r["payload"]["outcome"] == "fallback_activated"));
    assert!(!records
        .iter()
        .any(|r| r["kind"] == "leg_started" && r["payload"]["mode"] == "air_taxi"));
    let metrics: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["fallbacks"], 1);
    assert_eq!(metrics["completed"], 1);
}

#[test]
fn scenario_files_and_bad_input() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("broken.json");
    std::fs::write(&path, r#"{"name": "x", "graph": {"nodes": [], "edges": 3}}"#).unwrap();
    let o = run_into(&dir.path().join("out"), &["--scenario", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("graph.edges"), "{}", text(&o));

    let o = run_into(&dir.path().join("out"), &["--scenario", "no-such-scenario"]);
    assert_eq!(o.status.code(), Some(1));

    let o = run_into(&dir.path().join("out"), &["--scenario", "fig5-demo", "--strategy", "anarchy"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("unknown strategy"));

    let o = run_into(&dir.path().join("out"), &["--scenario", "fig5-demo", "--reasoner", "remote"]);
    assert_eq!(o.status.code(), Some(1), "remote without a url");

    // A scenario written by a previous run loads back from its file.
    let first = dir.path().join("first");
    assert_eq!(run_into(&first, &["--scenario", "replan-demo", "--script", "replan-approve"]).status.code(), Some(0));
    let copy = first.join("scenario.json");
    let again = dir.path().join("again");
    let o = run_into(&again, &["--scenario", copy.to_str().unwrap(), "--script", "replan-approve"]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    assert_eq!(
        std::fs::read(first.join("log.ndjson")).unwrap(),
        std::fs::read(again.join("log.ndjson")).unwrap()
    );
}

#[test]
fn verify_flags_an_air_leg_without_a_gate_record() {
    let dir = TempDir::new().unwrap();
    assert_eq!(run_into(dir.path(), &["--scenario", "fig5-demo", "--script", "fig5-approve"]).status.code(), Some(0));
    let records: Vec<Value> = log_lines(dir.path())
        .into_iter()
        .filter(|r| r["kind"] != "gate_outcome")
        .enumerate()
        .map(|(i, mut r)| {
            r["seq"] = Value::from(i as u64);
            r
        })
        .collect();
    let bad = dir.path().join("tampered.ndjson");
    write_log(&bad, &records);
    let v = holonsim(&["verify", bad.to_str().unwrap()]);
    assert_eq!(v.status.code(), Some(2), "{}", text(&v));
    assert!(text(&v).contains("gate_totality"), "{}", text(&v));
}

#[test]
fn verify_flags_legs_out_of_order() {
    let dir = TempDir::new().unwrap();
    assert_eq!(run_into(dir.path(), &["--scenario", "fig5-demo", "--script", "fig5-approve"]).status.code(), Some(0));
    let mut records = log_lines(dir.path());
    // Start the air leg before the first scooter leg has finished.
    let first_done = records
        .iter()
        .position(|r| r["kind"] == "leg_completed" && r["payload"]["leg_id"] == "T_a1")
        .unwrap();
    let air = records
        .iter()
        .position(|r| r["kind"] == "leg_started" && r["payload"]["leg_id"] == "T_a2")
        .unwrap();
    let moved = records.remove(air);
    records.insert(first_done, moved);
    let tick = records[first_done + 1]["tick"].clone();
    records[first_done]["tick"] = tick;
    for (i, r) in records.iter_mut().enumerate() {
        r["seq"] = Value::from(i as u64);
    }
    let bad = dir.path().join("reordered.ndjson");
    write_log(&bad, &records);
    let v = holonsim(&["verify", bad.to_str().unwrap()]);
    assert_eq!(v.status.code(), Some(2), "{}", text(&v));
    assert!(text(&v).contains("status_discipline"), "{}", text(&v));
}

#[test]
fn verify_rejects_unreadable_logs() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("junk.ndjson");
    std::fs::write(&bad, "{\"tick\": 0}\nnot json\n").unwrap();
    assert_eq!(holonsim(&["verify", bad.to_str().unwrap()]).status.code(), Some(1));
    let missing = dir.path().join("missing.ndjson");
    assert_eq!(holonsim(&["verify", missing.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn template_mismatch_fails_verification() {
    let dir = TempDir::new().unwrap();
    assert_eq!(run_into(dir.path(), &["--scenario", "replan-demo", "--script", "replan-approve"]).status.code(), Some(0));
    let log = dir.path().join("log.ndjson");
    let v = holonsim(&["verify", log.to_str().unwrap(), "--template", "fig5-template"]);
    assert_eq!(v.status.code(), Some(2), "{}", text(&v));
}

#[test]
fn compare_covers_every_strategy() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = holonsim(&["compare", "--scenario", "ten-trips", "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let mut reader = csv::Reader::from_path(dir.path().join("comparison.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 5);
    let headers = reader.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let row = |strategy: &str| rows.iter().find(|r| &r[0] == strategy).unwrap().clone();
    let load = |strategy: &str| row(strategy)[col("max_single_agent_load")].parse::<usize>().unwrap();
    let total = |strategy: &str| row(strategy)[col("total_messages")].parse::<usize>().unwrap();
    assert_eq!(load("facilitator"), total("facilitator"));
    assert!(load("facilitator") >= load("holonic"));
    for r in &rows {
        assert_eq!(&r[col("trips_completed")], "10");
    }
    let json: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("comparison.json")).unwrap()).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 5);
    assert!(dir.path().join("log-matchmaker.ndjson").exists());

    let one = holonsim(&["compare", "--scenario", "ten-trips", "--strategy", "broker"]);
    assert_eq!(one.status.code(), Some(0));
    let lines = String::from_utf8_lossy(&one.stdout).lines().count();
    assert_eq!(lines, 2, "header plus one row");

    let two = holonsim(&["compare", "--scenario", "ten-trips", "--strategy", "broker,mediator"]);
    assert_eq!(String::from_utf8_lossy(&two.stdout).lines().count(), 3);

    let bad = holonsim(&["compare", "--scenario", "ten-trips", "--strategy", "broker,chaos"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn same_seed_same_log() {
    let dir = TempDir::new().unwrap();
    let hash = |sub: &str| {
        let d = dir.path().join(sub);
        let o = run_into(&d, &["--scenario", "ten-trips", "--seed", "11", "--strategy", "mediator"]);
        assert_eq!(o.status.code(), Some(0), "{}", text(&o));
        std::fs::read(d.join("log.ndjson")).unwrap()
    };
    assert_eq!(hash("a"), hash("b"));
}

#[test]
fn paced_runs_take_wall_time() {
    let dir = TempDir::new().unwrap();
    let started = std::time::Instant::now();
    let o = run_into(dir.path(), &["--scenario", "fig5-demo", "--script", "fig5-approve", "--ticks-per-second", "100"]);
    assert_eq!(o.status.code(), Some(0));
    // fig5 runs 15 ticks.
    assert!(started.elapsed().as_millis() >= 140);
}
