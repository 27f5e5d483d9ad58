use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn wpcs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wpcs"))
        .args(args)
        .env_remove("WPCS_LOG")
        .output()
        .expect("run wpcs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn solve_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let run = wpcs(&["solve", "--seed", "4", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    assert!(run.stdout.is_empty());
    let doc = read_json(&out);
    assert!(doc["report"]["reward"].as_f64().unwrap() > 0.0);
    assert_eq!(doc["allocations"].as_array().unwrap().len(), 10);
    assert_eq!(doc["report"]["converged"], Value::Bool(true));
}

#[test]
fn solve_is_deterministic() {
    let a = wpcs(&["solve", "--seed", "11"]);
    let b = wpcs(&["solve", "--seed", "11"]);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    let c = wpcs(&["solve", "--seed", "12"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn bad_ratio_cap_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(
        &cfg,
        r#"{"sensors": [{"h": 1e-3, "a": 0.04, "s": 1e4, "f_cpu": 1e9, "q_r": 1e-12,
            "q_s": 1e-12, "q_c": 1e-14, "epsilon": 4, "R_max": 0.8}]}"#,
    )
    .unwrap();
    let run = wpcs(&["solve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&run), 3);
    assert!(
        stderr(&run).contains("sensors[0].R_max"),
        "{}",
        stderr(&run)
    );

    let run = wpcs(&["solve", "--set", "scenario.R_max=0.5"]);
    assert_eq!(code(&run), 3);
    assert!(stderr(&run).contains("scenario.R_max"));
}

#[test]
fn unknown_key_and_bad_json() {
    let run = wpcs(&["solve", "--set", "system.nope=1"]);
    assert_eq!(code(&run), 3);
    assert!(stderr(&run).contains("system.nope"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("broken.json");
    std::fs::write(&cfg, "{ not json").unwrap();
    assert_eq!(
        code(&wpcs(&["solve", "--config", cfg.to_str().unwrap()])),
        2
    );
    assert_eq!(code(&wpcs(&["solve", "--no-such-flag"])), 2);
}

#[test]
fn convergence_cap_exits_four() {
    let run = wpcs(&["solve", "--set", "iterate.max_iters=1"]);
    assert_eq!(code(&run), 4);
    assert!(!run.stdout.is_empty());
}

#[test]
fn sweep_csv_has_three_policies_per_point() {
    let run = wpcs(&[
        "sweep",
        "--axis",
        "p0",
        "--values",
        "0.01,0.02,0.04",
        "--trials",
        "4",
    ]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let csv = String::from_utf8(run.stdout).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "axis_value,policy,mean_reward,stderr,trials");
    assert_eq!(lines.len(), 1 + 3 * 3);
    for chunk in lines[1..].chunks(3) {
        let names: Vec<&str> = chunk.iter().map(|l| l.split(',').nth(1).unwrap()).collect();
        assert_eq!(names, ["optimal", "fcr", "no_compression"]);
    }
}

#[test]
fn sweep_t_reports_monotone_audit() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.csv");
    let args = [
        "sweep",
        "--axis",
        "t",
        "--values",
        "0.5,1,1.5",
        "--trials",
        "6",
        "--out",
        out.to_str().unwrap(),
    ];
    let run = wpcs(&args);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    assert!(
        stderr(&run).contains("monotone optimal: ok"),
        "{}",
        stderr(&run)
    );
    let first = std::fs::read(&out).unwrap();
    assert_eq!(code(&wpcs(&args)), 0);
    assert_eq!(first, std::fs::read(&out).unwrap());
}

#[test]
fn empty_sweep_values_exit_three() {
    assert_eq!(code(&wpcs(&["sweep", "--values", ""])), 3);
    assert_eq!(code(&wpcs(&["sweep", "--values", "0.2,0.1"])), 3);
}

#[test]
fn default_battery_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("audit.json");
    let run = wpcs(&["verify", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let doc = read_json(&out);
    let checks = doc["checks"].as_array().unwrap();
    assert!(checks.iter().all(|c| c["passed"] == Value::Bool(true)));
    assert!(checks.iter().any(|c| c["name"] == "threshold_structure"));
}

#[test]
fn sampled_instance_round_trips_and_includes_grid_for_two_sensors() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("inst.json");
    let run = wpcs(&[
        "sample",
        "--seed",
        "5",
        "--set",
        "scenario.n_sensors=2",
        "--out",
        inst.to_str().unwrap(),
    ]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));

    let from_file = wpcs(&["solve", "--config", inst.to_str().unwrap()]);
    let from_seed = wpcs(&["solve", "--seed", "5", "--set", "scenario.n_sensors=2"]);
    assert_eq!(code(&from_file), 0);
    assert_eq!(from_file.stdout, from_seed.stdout);

    let audit = dir.path().join("audit.json");
    let run = wpcs(&[
        "verify",
        "--config",
        inst.to_str().unwrap(),
        "--out",
        audit.to_str().unwrap(),
    ]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let doc = read_json(&audit);
    assert!(doc["checks"]
        .as_array()
        .unwrap()
        .iter()
        .any(|c| c["name"] == "grid_oracle_gap" && c["passed"] == Value::Bool(true)));
}

#[test]
fn injected_violation_exits_five_and_names_constraint() {
    let dir = tempfile::tempdir().unwrap();
    let solved = dir.path().join("solved.json");
    assert_eq!(
        code(&wpcs(&[
            "solve",
            "--seed",
            "2",
            "--out",
            solved.to_str().unwrap()
        ])),
        0
    );
    let doc = read_json(&solved);

    let mut allocs = doc["allocations"].clone();
    let p = allocs[3]["power"].as_f64().unwrap();
    allocs[3]["power"] = Value::from(p * 0.5);
    let cfg = serde_json::json!({
        "system": doc["system"],
        "sensors": doc["sensors"],
        "allocations": allocs,
    });
    let path = dir.path().join("bad.json");
    std::fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let run = wpcs(&["verify", "--config", path.to_str().unwrap()]);
    assert_eq!(code(&run), 5, "{}", stderr(&run));
    assert!(
        stderr(&run).contains("energy_constraint violated by sensor 3"),
        "{}",
        stderr(&run)
    );

    // the untouched allocation passes
    let cfg = serde_json::json!({
        "system": doc["system"],
        "sensors": doc["sensors"],
        "allocations": doc["allocations"],
    });
    std::fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(
        code(&wpcs(&["verify", "--config", path.to_str().unwrap()])),
        0
    );
}

#[test]
fn logging_stays_on_stderr() {
    let run = Command::new(env!("CARGO_BIN_EXE_wpcs"))
        .args(["solve", "--seed", "1"])
        .env("WPCS_LOG", "info")
        .output()
        .unwrap();
    assert_eq!(code(&run), 0);
    assert!(stderr(&run).contains("solving 10 sensors"));
    let quiet = wpcs(&["solve", "--seed", "1"]);
    assert_eq!(run.stdout, quiet.stdout);
    assert!(quiet.stderr.is_empty());
    serde_json::from_slice::<Value>(&run.stdout).unwrap();
}
