use std::path::{Path, PathBuf};
use std::process::Command;

use aerovac_core::session::Trace;
use aerovac_gateway::headless::{record, replay_with, run_headless, Report};
use aerovac_gateway::GatewayError;

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_aerovac")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn bundled_gap_trace_replays() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("gap.json");
    let out = run_headless(&scenario_path("gap.toml"), &scenario_path("gap.trace"), &report).unwrap();
    assert_eq!(out.scenario, "gap");
    assert!(out.metrics.finished);
    assert!(out.metrics.min_clearance.unwrap() > 0.0);
    assert!(out.metrics.goal_reach_time.is_some());
    assert_eq!(Report::read(&report).unwrap(), out);
}

#[test]
fn cli_replay_writes_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let gap = scenario_path("gap.toml");
    let trace = scenario_path("gap.trace");
    let out = cli(&["replay", "--scenario", arg(&gap), "--trace", arg(&trace), "--report", arg(&report)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&report).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["scenario"], "gap");
    for key in ["rmse", "min_clearance", "goal_reach_time", "finished"] {
        assert!(v["metrics"].get(key).is_some(), "report lacks {key}");
    }
}

#[test]
fn corrupted_trace_header_fails_without_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = std::fs::read(scenario_path("gap.trace")).unwrap();
    bytes[3] ^= 0xff;
    let bad = dir.path().join("bad.trace");
    std::fs::write(&bad, bytes).unwrap();
    let report = dir.path().join("r.json");

    let err = run_headless(&scenario_path("gap.toml"), &bad, &report).unwrap_err();
    assert!(matches!(err, GatewayError::File { .. }), "{err}");
    assert!(!report.exists());

    let out = cli(&["replay", "--scenario", arg(&scenario_path("gap.toml")), "--trace", arg(&bad), "--report", arg(&report)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("not a trace file"));
    assert!(!report.exists());
}

#[test]
fn missing_scenario_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let missing = dir.path().join("nowhere.toml");
    let out = cli(&["replay", "--scenario", arg(&missing), "--trace", arg(&scenario_path("gap.trace")), "--report", arg(&report)]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("nowhere.toml"), "{stderr}");
    assert!(!report.exists());
}

#[test]
fn divergence_names_the_tick() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let overrides = ["rng_seed=12".to_owned()];
    let err = replay_with(&scenario_path("gap.toml"), &scenario_path("gap.trace"), &report, &overrides).unwrap_err();
    assert!(matches!(err, GatewayError::Diverged { tick: 0 }), "{err}");
    assert!(!report.exists());

    // tamper with a digest late in the run
    let mut trace = Trace::load(scenario_path("gap.trace")).unwrap();
    trace.digests[1234].digest = "0".repeat(64);
    let tampered = dir.path().join("tampered.trace");
    trace.save(&tampered).unwrap();
    let gap = scenario_path("gap.toml");
    let out = cli(&["replay", "--scenario", arg(&gap), "--trace", arg(&tampered), "--report", arg(&report)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tick 1234"));
    assert!(!report.exists());
}

#[test]
fn run_then_replay_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("open.trace");
    let first = dir.path().join("first.json");
    let second = dir.path().join("second.json");
    let scenario = scenario_path("open_track.toml");
    let overrides = ["planner.step_size=0.4".to_owned()];
    let live = record(&scenario, Some(&trace), Some(&first), &overrides).unwrap();
    let again = replay_with(&scenario, &trace, &second, &overrides).unwrap();
    assert_eq!(live, again);
    assert_eq!(Report::read(&first).unwrap(), Report::read(&second).unwrap());
}

#[test]
fn bad_overrides_are_rejected() {
    let scenario = scenario_path("open_track.toml");
    for bad in ["no_equals_sign", "field.nope=1", "dt=-1"] {
        assert!(record(&scenario, None, None, &[bad.to_owned()]).is_err(), "{bad}");
    }
    let out = cli(&["run", "--scenario", arg(&scenario), "--set", "field.nope=1"]);
    assert!(!out.status.success());
}

#[test]
fn cli_serve_runs_for_a_fixed_duration() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("serve.trace");
    let scenario = scenario_path("open_track.toml");
    let out = cli(&["serve", "--scenario", arg(&scenario), "--port", "0", "--duration", "0.2", "--record", arg(&trace)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Report = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report.metrics.ticks, 20);
    assert_eq!(Trace::load(&trace).unwrap().ticks(), 20);
}
