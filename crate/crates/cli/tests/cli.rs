use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use slosh_stop::experiments::{read_sweep_csv, SweepSummary, SWEEP_COLUMNS};
use slosh_stop::sim::{RunMetrics, TRACE_COLUMNS};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slosh-stop"))
        .args(args)
        .output()
        .unwrap()
}

/// Fresh output directory per test.
fn out_dir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR"))
        .join("cli")
        .join(name);
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn header(path: &Path) -> String {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines().next().unwrap().to_string()
}

/// Limits are stored in radians, so degrees come back rounded.
fn same_deg(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-12
}

fn metrics(path: &Path) -> RunMetrics {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn rod_length_of_the_default_container() {
    let dir = out_dir("rod_length");
    let out = bin(&["rod-length", "--out", dir.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(
        String::from_utf8(out.stdout).unwrap().trim(),
        "rod length 21.73 mm"
    );
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(json["radius_mm"], 40.0);
    let l = json["rod_length_mm"].as_f64().unwrap();
    assert!((20.5..=22.5).contains(&l), "{l}");
}

#[test]
fn stop_writes_traces_and_metrics() {
    let dir = out_dir("stop");
    let out = bin(&["stop", "--out", dir.to_str().unwrap()]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(header(&dir.join("traces.csv")), TRACE_COLUMNS.join(","));
    let m = metrics(&dir.join("metrics.json"));
    assert!(m.stopped);
    assert!(same_deg(m.slosh_limit_deg, 5.0));
    assert!(String::from_utf8(out.stdout).unwrap().starts_with("stop: "));
}

#[test]
fn baseline_writes_both_runs() {
    let dir = out_dir("baseline");
    let out = bin(&["baseline", "--out", dir.to_str().unwrap()]);
    assert!(out.status.success());
    let ours = metrics(&dir.join("ours/metrics.json"));
    let base = metrics(&dir.join("baseline/metrics.json"));
    assert!(base.stopping_time < ours.stopping_time);
    assert!(dir.join("baseline/traces.csv").exists());
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap();
    assert!(json["ours"].is_object() && json["baseline"].is_object());
}

#[test]
fn single_cell_heatmap() {
    let dir = out_dir("heatmap");
    let out = bin(&[
        "heatmap",
        "--rods",
        "20",
        "--limits",
        "5",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert_eq!(header(&dir.join("sweep.csv")), SWEEP_COLUMNS.join(","));
    let rows = read_sweep_csv(dir.join("sweep.csv")).unwrap();
    assert_eq!(rows.len(), 1);
    assert!((rows[0].rod_length_mm - 20.0).abs() < 1e-9);
    assert_eq!(rows[0].slosh_limit_deg, 5.0);
    assert!(rows[0].stopped());
    let summary: SweepSummary =
        serde_json::from_str(&std::fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap();
    assert_eq!((summary.cells, summary.failed), (1, 0));
}

#[test]
fn robustness_accepts_negative_errors() {
    let dir = out_dir("robustness");
    let out = bin(&[
        "robustness",
        "--errors",
        "-0.2,0.2",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let rows = read_sweep_csv(dir.join("sweep.csv")).unwrap();
    let errors: Vec<f64> = rows.iter().map(|r| r.error_fraction).collect();
    assert_eq!(errors, [-0.2, 0.2]);
    assert!(rows.iter().all(|r| r.rod_length_mm == 50.0));
}

#[test]
fn config_file_values_and_flag_overrides() {
    let dir = out_dir("config");
    std::fs::create_dir_all(&dir).unwrap();
    let toml = dir.join("stop.toml");
    std::fs::write(&toml, "slosh_limit_deg = 3.0\n\n[runtime]\ntimeout = 5.0\n").unwrap();

    let from_file = dir.join("file");
    let out = bin(&[
        "stop",
        "--config",
        toml.to_str().unwrap(),
        "--out",
        from_file.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(same_deg(
        metrics(&from_file.join("metrics.json")).slosh_limit_deg,
        3.0
    ));

    let overridden = dir.join("flag");
    let out = bin(&[
        "stop",
        "--config",
        toml.to_str().unwrap(),
        "--limit",
        "7",
        "--out",
        overridden.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(same_deg(
        metrics(&overridden.join("metrics.json")).slosh_limit_deg,
        7.0
    ));
}

#[test]
fn bad_arguments_fail() {
    assert!(!bin(&["stop", "--limit", "abc"]).status.success());
    assert!(!bin(&["no-such-command"]).status.success());
    let dir = out_dir("bad");
    let out = bin(&["heatmap", "--rods", "-5", "--out", dir.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr)
        .unwrap()
        .starts_with("error: "));
    let missing = bin(&["stop", "--config", "/nonexistent/cfg.toml"]);
    assert!(!missing.status.success());
    let out = bin(&["rod-length", "--radius", "0"]);
    assert!(!out.status.success());
}
