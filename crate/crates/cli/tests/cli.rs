use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn floodgate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_floodgate"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn run_into(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    floodgate(&args)
}

#[test]
fn run_writes_the_output_contract() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_into(dir.path(), &["--trace", "--plot"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for file in [
        "metrics.csv",
        "alarms.csv",
        "loss.csv",
        "report.json",
        "trace.csv",
        "alarms.svg",
        "drops.svg",
    ] {
        assert!(dir.path().join(file).exists(), "{file} missing");
    }
    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(metrics.starts_with(
        "window_start_s,p_arrivals,p_departures,p_drops,bytes_tx,utilization,flow_count,avg_pkt_size,max_buf,mean_qlen,mean_wait_s\n"
    ));
    assert_eq!(metrics.lines().count(), 121);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["alarm_runs"].as_array().unwrap().len(), 3);
    assert!(report["little"]["residual_n"].as_f64().unwrap() < 0.05);
    let loss = fs::read_to_string(dir.path().join("loss.csv")).unwrap();
    assert!(loss.starts_with("class,flood_index,arrivals,drops,loss_percent\n"));
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(trace.starts_with("time_ns,kind,packet_id,src,sport,dst,dport,proto,size_bytes\n"));
}

#[test]
fn same_seed_gives_identical_files() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert_eq!(code(&run_into(a.path(), &["--seed", "77"])), 0);
    assert_eq!(code(&run_into(b.path(), &["--seed", "77"])), 0);
    for file in ["metrics.csv", "alarms.csv", "loss.csv", "report.json"] {
        assert_eq!(
            fs::read(a.path().join(file)).unwrap(),
            fs::read(b.path().join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn no_attack_reports_zero_alarm_windows() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run_into(dir.path(), &["--no-attack"])), 0);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["classification"]["alarm_windows"], 0);
}

#[test]
fn window_flag_changes_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run_into(dir.path(), &["--window", "0.5"])), 0);
    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 241);
}

#[test]
fn emitted_scenario_round_trips_through_run() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("default.json");
    assert_eq!(
        code(&floodgate(&[
            "emit-default-scenario",
            "--out",
            path.to_str().unwrap()
        ])),
        0
    );
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    let ports: Vec<u64> = json["attack"]["floods"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["flow"]["dport"].as_u64().unwrap())
        .collect();
    assert_eq!(ports, [21, 5060, 1580]);

    let out_dir = dir.path().join("out");
    let out = floodgate(&[
        "run",
        path.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn invalid_scenario_exits_with_field_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let mut json: serde_json::Value =
        serde_json::from_str(&floodgate::scenario::ScenarioConfig::to_json(
            &floodgate::traffic::build_default_scenario(),
        ))
        .unwrap();
    json["link_capacity"] = 0.into();
    json["window_s"] = (-1.0).into();
    fs::write(&path, json.to_string()).unwrap();
    let out = floodgate(&[
        "run",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("link_capacity") && stderr.contains("window_s"),
        "{stderr}"
    );

    fs::write(&path, r#"{"schema_version": 1, "surprise": true}"#).unwrap();
    assert_eq!(code(&floodgate(&["run", path.to_str().unwrap()])), 2);
}

#[test]
fn validate_passes_and_catches_injected_fault() {
    let out = floodgate(&["validate"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(code(&out), 0, "{stdout}");
    assert!(stdout.lines().all(|l| l.starts_with("PASS")));

    let out = floodgate(&["validate", "--inject-fault", "buffer-off-by-one"]);
    assert_eq!(code(&out), 4);
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL mm1k_blocking"));
}

#[test]
fn validate_rejects_unstable_queue() {
    let out = floodgate(&["validate", "--lambda", "12", "--mu", "10"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unstable"));
}

#[test]
fn calibration_failures_have_their_own_exit_code() {
    let out = floodgate(&["calibrate", "--target", "0.001", "--seeds", "1"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unreachable"));
    assert_eq!(code(&floodgate(&["calibrate", "--target", "150"])), 3);
}

#[test]
fn sweep_aggregates_seeds() {
    let out = floodgate(&["sweep", "--seeds", "2"]);
    assert_eq!(code(&out), 0);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["runs"].as_array().unwrap().len(), 2);
    assert!(report["mean_accuracy"].as_f64().unwrap() >= 0.95);

    let out = floodgate(&["sweep", "--seeds", "2", "--no-attack"]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["false_alarm_rate"], 0.0);
}
