use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const OUTPUTS: [&str; 4] = ["truth.csv", "measurements.csv", "estimates.csv", "metrics.csv"];

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iges-dse")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{}: {e}", dir.join(name).display()))
}

#[test]
fn run_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture("threenode.json");
    let out = cli(&["run", "--config", s(&cfg), "--scenario", "gaussian", "--seed", "42", "--out", s(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in OUTPUTS.iter().chain(["manifest.json"].iter()) {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("mean KF step"), "{stdout}");
    let metrics = String::from_utf8(read(dir.path(), "metrics.csv")).unwrap();
    assert!(metrics.starts_with("channel,group,eps1,eps2,flag\n"));
    let truth = String::from_utf8(read(dir.path(), "truth.csv")).unwrap();
    assert_eq!(truth.lines().count(), 1 + 24);
}

#[test]
fn bundled_fixture_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["run", "--config", s(&fixture("iges30_39.json")), "--seed", "42", "--steps", "12", "--out", s(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8(read(dir.path(), "estimates.csv")).unwrap().lines().count(), 13);
}

#[test]
fn missing_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = cli(&["run", "--config", s(&missing), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));
}

#[test]
fn unknown_scenario_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["run", "--config", s(&fixture("threenode.json")), "--scenario", "uniform", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn heavy_tailed_run_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["run", "--config", s(&fixture("threenode.json")), "--scenario", "cauchy", "--out", s(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = String::from_utf8(read(dir.path(), "manifest.json")).unwrap();
    assert!(manifest.contains("\"cauchy\""));
}

#[test]
fn manifest_reproduces_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = fixture("iges30_39.json");
    let out = cli(&[
        "run", "--config", s(&cfg), "--scenario", "biased", "--bias", "0.03", "--seed", "7", "--steps", "12", "--out",
        s(a.path()),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = a.path().join("manifest.json");
    let out = cli(&["run", "--manifest", s(&manifest), "--out", s(b.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in OUTPUTS {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f} differs");
    }
}

#[test]
fn simulate_then_estimate_matches_run() {
    let run = tempfile::tempdir().unwrap();
    let sim = tempfile::tempdir().unwrap();
    let est = tempfile::tempdir().unwrap();
    let cfg = fixture("threenode.json");
    let common = ["--config", s(&cfg), "--scenario", "laplace", "--seed", "3"];
    let out = cli(&[&["run"], &common[..], &["--out", s(run.path())]].concat());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = cli(&[&["simulate"], &common[..], &["--out", s(sim.path())]].concat());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["truth.csv", "measurements.csv"] {
        assert_eq!(read(run.path(), f), read(sim.path(), f), "{f} differs");
    }
    let out = cli(&[&["estimate"], &common[..], &["--input", s(sim.path()), "--out", s(est.path())]].concat());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["estimates.csv", "metrics.csv"] {
        assert_eq!(read(run.path(), f), read(est.path(), f), "{f} differs");
    }
}

#[test]
fn several_scenarios_in_parallel() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&[
        "run",
        "--config",
        s(&fixture("threenode.json")),
        "--scenarios",
        "gaussian,cauchy",
        "--jobs",
        "2",
        "--out",
        s(dir.path()),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["gaussian", "cauchy"] {
        assert!(dir.path().join(name).join("metrics.csv").is_file());
    }
}

#[test]
fn validate_reports_sizes() {
    let out = cli(&["validate", "--config", s(&fixture("iges30_39.json"))]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("30 gas nodes") && stdout.contains("39 buses") && stdout.contains("2 GTUs"), "{stdout}");
}

#[test]
fn invalid_model_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(fixture("threenode.json")).unwrap();
    // Point the GTU at the source node.
    let bad = text.replacen("\"gas_sink\": 3", "\"gas_sink\": 1", 1);
    assert_ne!(bad, text);
    let path = dir.path().join("bad.json");
    std::fs::write(&path, bad).unwrap();
    let out = cli(&["validate", "--config", s(&path)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("GtuSinkNotSink"));
}
