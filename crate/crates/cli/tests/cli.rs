//! The `flowline` binary against files on disk.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use flowline_core::agents::ManagerPolicy;
use flowline_core::engine::Mode;
use flowline_core::gateway::{ClockCommand, CommandKind, CommandScript, Decision, LiveSession};
use flowline_core::scenario::{generate_scenario, EventLog, GeneratorParams, Scenario};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_flowline"))
}

fn flowline(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn flowline")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn small_scenario(dir: &Path, failures: usize) -> PathBuf {
    let params = GeneratorParams {
        initial_orders: 3,
        dynamic_orders: 5,
        failures,
        arrival_span: 300,
        hard_percent: 50,
        max_quantity: 2,
    };
    let path = dir.join("small.scenario.json");
    fs::write(&path, generate_scenario(5, &params).pretty_json()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_artifacts_and_refuses_to_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = small_scenario(dir.path(), 1);
    let out = dir.path().join("out");
    let o = flowline(&["run", "--scenario", s(&scenario), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["events.jsonl", "gantt.csv", "summary.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let summary: Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["mode"], "dynamic");
    assert_eq!(summary["protocol_violations"], 0);
    assert!(summary["makespan"].as_i64().unwrap() > 0);
    let records =
        EventLog::parse_jsonl(&fs::read_to_string(out.join("events.jsonl")).unwrap()).unwrap();
    assert_eq!(records[0].kind, "RunStarted");

    let again = flowline(&["run", "--scenario", s(&scenario), "--out", s(&out)]);
    assert_eq!(again.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    let forced = flowline(&[
        "run",
        "--scenario",
        s(&scenario),
        "--out",
        s(&out),
        "--force",
        "--mode",
        "static",
    ]);
    assert!(forced.status.success());
    let summary: Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["mode"], "static");
}

#[test]
fn validate_accepts_run_output_and_flags_overlap() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = small_scenario(dir.path(), 2);
    let out = dir.path().join("out");
    assert!(
        flowline(&["run", "--scenario", s(&scenario), "--out", s(&out)])
            .status
            .success()
    );
    let gantt = out.join("gantt.csv");
    let ok = flowline(&["validate", "--gantt", s(&gantt), "--scenario", s(&scenario)]);
    assert!(ok.status.success(), "{}", stdout(&ok));

    // move the second row on the first machine back onto the first one
    let text = fs::read_to_string(&gantt).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let first: Vec<String> = lines[1].split(',').map(String::from).collect();
    let second: Vec<String> = lines[2].split(',').map(String::from).collect();
    assert_eq!(first[0], second[0]);
    let shift = second[4].parse::<i64>().unwrap() - first[4].parse::<i64>().unwrap();
    let mut moved = second.clone();
    moved[4] = (second[4].parse::<i64>().unwrap() - shift).to_string();
    moved[5] = (second[5].parse::<i64>().unwrap() - shift).to_string();
    lines[2] = moved.join(",");
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, lines.join("\n") + "\n").unwrap();
    let o = flowline(&["validate", "--gantt", s(&bad), "--scenario", s(&scenario)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("Overlap"), "{}", stdout(&o));
}

#[test]
fn compare_reports_deltas() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = small_scenario(dir.path(), 2);
    let report = dir.path().join("report.json");
    let o = flowline(&[
        "compare",
        "--scenario",
        s(&scenario),
        "--modes",
        "static,dynamic",
        "--out",
        s(&report),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let a = r["a"]["metrics"]["total_tardiness"].as_i64().unwrap();
    let b = r["b"]["metrics"]["total_tardiness"].as_i64().unwrap();
    assert_eq!(r["delta"]["total_tardiness"].as_i64().unwrap(), b - a);
    assert_eq!(
        flowline(&["compare", "--scenario", s(&scenario), "--out", s(&report)])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        flowline(&["compare", "--scenario", s(&scenario), "--modes", "dynamic"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn oracle_prints_optimum_and_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("i.json");
    fs::write(&inst, r#"{"jobs":[{"id":"J1","times":[3,2]},{"id":"J2","times":[1,4]},{"id":"J3","times":[2,3]}]}"#).unwrap();
    let o = flowline(&["oracle", "--instance", s(&inst)]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "optimum 10\nsequence J2,J1,J3\n");
}

#[test]
fn replay_reproduces_a_recorded_session() {
    let dir = tempfile::tempdir().unwrap();
    let path = small_scenario(dir.path(), 0);
    let mut scenario: Scenario = flowline_core::scenario::load_scenario_file(&path).unwrap();
    scenario.policy.manager = ManagerPolicy::Interactive;
    fs::write(&path, scenario.pretty_json()).unwrap();

    let mut session = LiveSession::new(&scenario, Mode::Dynamic, 60.0, true).unwrap();
    session
        .apply(CommandKind::Clock(ClockCommand::Step(400)))
        .unwrap();
    let pending: Vec<String> = session
        .engine()
        .pending_proposals()
        .iter()
        .map(|p| p.proposal_id.clone())
        .collect();
    assert!(!pending.is_empty());
    for pid in pending {
        session
            .apply(CommandKind::Decide {
                proposal_id: pid,
                decision: Decision::Confirm,
            })
            .unwrap();
    }
    let script: CommandScript = session.script();
    let commands = dir.path().join("commands.json");
    fs::write(&commands, serde_json::to_string(&script).unwrap()).unwrap();

    let o = flowline(&["replay", "--scenario", s(&path), "--commands", s(&commands)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o), session.engine().log().to_jsonl());

    let out = dir.path().join("replayed");
    assert!(flowline(&[
        "replay",
        "--scenario",
        s(&path),
        "--commands",
        s(&commands),
        "--out",
        s(&out)
    ])
    .status
    .success());
    assert_eq!(
        fs::read_to_string(out.join("events.jsonl")).unwrap(),
        session.engine().log().to_jsonl()
    );
}

#[test]
fn bad_input_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = small_scenario(dir.path(), 0);
    let missing = dir.path().join("missing.json");
    assert_eq!(
        flowline(&["run", "--scenario", s(&missing), "--out", s(dir.path())])
            .status
            .code(),
        Some(2)
    );
    let o = flowline(&[
        "run",
        "--scenario",
        s(&scenario),
        "--mode",
        "chaotic",
        "--out",
        s(&dir.path().join("x")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown mode"));
    fs::write(&missing, "{}").unwrap();
    assert_eq!(
        flowline(&[
            "run",
            "--scenario",
            s(&missing),
            "--out",
            s(&dir.path().join("y"))
        ])
        .status
        .code(),
        Some(2)
    );
}
