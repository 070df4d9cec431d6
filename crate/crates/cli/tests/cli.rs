use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.json"))
}

fn voltgp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_voltgp"))
        .args(args)
        .env_remove("VOLTGP_WORKERS")
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Short tc1 run into `dir`, returning the printed manifest.
fn short_run(src: &Path, dir: &Path, extra: &[&str]) -> Value {
    let mut args = vec![
        "run",
        src.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
        "--override",
        "horizon=300",
        "--override",
        "realizations=4",
    ];
    args.extend_from_slice(extra);
    let out = voltgp(&args);
    assert!(out.status.success(), "run failed: {}", stderr(&out));
    serde_json::from_slice(&out.stdout).expect("manifest on stdout")
}

fn csv_of(manifest: &Value) -> String {
    fs::read_to_string(manifest["csv"].as_str().unwrap()).unwrap()
}

fn write_variant(dir: &Path, name: &str, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let mut doc: Value = serde_json::from_str(&fs::read_to_string(scenario("tc1")).unwrap()).unwrap();
    edit(&mut doc);
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(&doc).unwrap()).unwrap();
    path
}

#[test]
fn validate_accepts_shipped_scenarios() {
    for name in ["tc1", "tc2", "tc3", "unit"] {
        let out = voltgp(&["validate", scenario(name).to_str().unwrap()]);
        assert!(out.status.success(), "{name}: {}", stderr(&out));
        assert!(String::from_utf8_lossy(&out.stdout).contains("2/M"));
    }
}

#[test]
fn validate_names_the_line_closing_a_cycle() {
    let dir = TempDir::new().unwrap();
    let path = write_variant(dir.path(), "cycle.json", |doc| {
        let lines = doc["topology"]["lines"].as_array_mut().unwrap();
        // Rewire the last line into a loop, stranding its far bus.
        lines[19] = serde_json::json!({"from": 5, "to": 2, "r": 0.01, "x": 0.02});
    });
    let out = voltgp(&["validate", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("cycle"), "{}", stderr(&out));
    assert!(stderr(&out).contains("line 19"), "{}", stderr(&out));
}

#[test]
fn validate_rejects_zero_duty_cycle() {
    let dir = TempDir::new().unwrap();
    let path = write_variant(dir.path(), "eta0.json", |doc| {
        doc["schedule"]["eta"] = Value::from(0.0);
    });
    let out = voltgp(&["validate", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("/schedule/eta"), "{}", stderr(&out));
}

#[test]
fn repeated_runs_and_manifest_replay_are_identical() {
    let dir = TempDir::new().unwrap();
    let a = short_run(&scenario("tc1"), &dir.path().join("a"), &["--workers", "1"]);
    let b = short_run(&scenario("tc1"), &dir.path().join("b"), &["--workers", "3"]);
    let first = csv_of(&a);
    assert_eq!(first, csv_of(&b));

    let manifest_path = dir.path().join("a").join("tc1.manifest.json");
    assert!(manifest_path.exists());
    let out = voltgp(&[
        "run",
        manifest_path.to_str().unwrap(),
        "--out",
        dir.path().join("replay").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "replay failed: {}", stderr(&out));
    let replay: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(first, csv_of(&replay));
    assert_eq!(a["scenario_hash"], replay["scenario_hash"]);
}

#[test]
fn csv_has_one_finite_row_per_step() {
    let dir = TempDir::new().unwrap();
    let manifest = short_run(&scenario("tc1"), dir.path(), &[]);
    let csv = csv_of(&manifest);
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "step,mismatch_l2,objective,tracking_err_weighted,oracle_objective,bound,cum_updates,mismatch_std,tracking_std"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 300);
    for row in rows {
        for cell in row.split(',').filter(|c| !c.is_empty()) {
            let x: f64 = cell.parse().unwrap();
            assert!(x.is_finite(), "non-finite cell in {row}");
        }
    }
    let sidecar: Value = serde_json::from_str(&fs::read_to_string(manifest["sidecar"].as_str().unwrap()).unwrap()).unwrap();
    assert!(sidecar.is_object());
}

#[test]
fn epsilon_override_resolves_the_dynamic_bound() {
    let dir = TempDir::new().unwrap();
    let manifest = short_run(
        &scenario("tc1"),
        dir.path(),
        &["--override", "controller.epsilon=auto_dynamic"],
    );
    assert_eq!(manifest["overrides"][2], "controller.epsilon=auto_dynamic");
    let resolved = manifest["resolved"].to_string();
    assert!(resolved.contains("0.0704"), "resolved: {resolved}");
}

#[test]
fn singleton_sweep_matches_run() {
    let dir = TempDir::new().unwrap();
    let run = short_run(&scenario("tc1"), &dir.path().join("run"), &["--override", "schedule.eta=0.25"]);
    let out = voltgp(&[
        "sweep",
        scenario("tc1").to_str().unwrap(),
        "--param",
        "schedule.eta",
        "--values",
        "0.25",
        "--out",
        dir.path().join("sweep").to_str().unwrap(),
        "--override",
        "horizon=300",
        "--override",
        "realizations=4",
    ]);
    assert!(out.status.success(), "sweep failed: {}", stderr(&out));
    let sweep_dir = dir.path().join("sweep");
    assert!(sweep_dir.join("summary.csv").exists());
    let csvs: Vec<PathBuf> = fs::read_dir(&sweep_dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| {
            let name = p.file_name().unwrap().to_string_lossy();
            name.ends_with(".csv") && name != "summary.csv"
        })
        .collect();
    assert_eq!(csvs.len(), 1);
    assert_eq!(fs::read_to_string(&csvs[0]).unwrap(), csv_of(&run));
}

#[test]
fn failed_sweep_points_are_recorded_and_skipped() {
    let dir = TempDir::new().unwrap();
    let out = voltgp(&[
        "sweep",
        scenario("unit").to_str().unwrap(),
        "--param",
        "dynamics.alpha",
        "--values",
        "0.5,1.5",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(!rows[0].ends_with(",,,,"));
    assert!(rows[1].starts_with("1.5,,"));
}
