use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn pointassim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pointassim")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL: &str = "\
seed = 3
mesh_n = 5
n_list = [12, 40]
methods = [\"point\", \"nearest\", \"linear\"]
lcurve_n = 20
alpha_count = 3
xval_n = 120
train_fraction = 0.25
max_iter = 15
ensemble_size = 2
hydro_nx = 9
hydro_ny = 4
horizon = 1.0
";

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in walk(dir) {
        if entry.extension().is_some_and(|e| e == "csv") {
            out.push((entry.strip_prefix(dir).unwrap().display().to_string(), fs::read(&entry).unwrap()));
        }
    }
    out.sort();
    out
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut files = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            files.extend(walk(&p));
        } else {
            files.push(p);
        }
    }
    files
}

#[test]
fn missing_config_fails_without_outputs() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("run");
    let missing = tmp.path().join("nope.toml");
    let o = pointassim(&["lcurve", "--config", missing.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(!out.exists());
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["status"], "error");
    assert_eq!(err["kind"], "config");

    let o = pointassim(&["hydrology", "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(!out.exists());
}

#[test]
fn unknown_key_reports_its_line() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.toml", "seed = 1\nmesh_n = 4\nalpah = 0.1\n");
    let out = tmp.path().join("run");
    let o = pointassim(&["xval", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["line"], 3);
    assert!(err["message"].as_str().unwrap().contains("alpah"));
    assert!(!out.exists());
}

#[test]
fn invalid_values_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.toml", "train_fraction = 1.5\n");
    let o = pointassim(&["xval", "--config", &cfg, "--out", tmp.path().join("r").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn taylor_test_passes_and_prints_rates() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("t");
    let o = pointassim(&["taylor-test", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 6);
    assert!(text.lines().all(|l| l.ends_with("ok")));
    assert!(out.join("taylor.csv").exists());
    assert!(out.join("manifest.json").exists());
}

#[test]
fn reruns_are_byte_identical_across_job_counts() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "small.toml", SMALL);
    for cmd in ["conductivity", "lcurve", "xval", "hydrology"] {
        let a = tmp.path().join(format!("{}_a", cmd));
        let b = tmp.path().join(format!("{}_b", cmd));
        let oa = pointassim(&[cmd, "--config", &cfg, "--out", a.to_str().unwrap(), "--jobs", "1"]);
        assert!(oa.status.success(), "{}: {}", cmd, String::from_utf8_lossy(&oa.stderr));
        let ob = pointassim(&[cmd, "--config", &cfg, "--out", b.to_str().unwrap(), "--jobs", "3"]);
        assert!(ob.status.success());
        let (fa, fb) = (csv_files(&a), csv_files(&b));
        assert!(!fa.is_empty());
        assert_eq!(fa, fb, "{}", cmd);
    }
}

#[test]
fn manifest_records_config_and_seed() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "small.toml", SMALL);
    let out = tmp.path().join("c");
    let o = pointassim(&["conductivity", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "11"]);
    assert!(o.status.success());
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "conductivity");
    assert_eq!(m["seed"], 11);
    assert_eq!(m["config"]["seed"], 11);
    assert_eq!(m["config"]["mesh_n"], 5);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    let outputs: Vec<&str> = m["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(outputs.contains(&"posterior_consistency.csv"));
    assert!(outputs.contains(&"fields/posterior_consistency.vtk"));
    for f in outputs {
        assert!(out.join(f).exists(), "{}", f);
    }
    let table = fs::read_to_string(out.join("posterior_consistency.csv")).unwrap();
    assert!(table.starts_with("# seed=11\n"));
}

#[test]
fn locate_writes_cells_and_flags_outside_points() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.toml", "mesh_n = 4\n");
    let pts = write(tmp.path(), "p.csv", "x,y\n0.1,0.1\n0.9,0.6\n");
    let out = tmp.path().join("l");
    let o = pointassim(&["locate", "--points", &pts, "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("located.csv")).unwrap();
    assert_eq!(text.lines().count(), 3);

    let bad = write(tmp.path(), "bad.csv", "x,y\n0.1,0.1\n1.5,0.5\n");
    let out2 = tmp.path().join("l2");
    let o = pointassim(&["locate", "--points", &bad, "--config", &cfg, "--out", out2.to_str().unwrap()]);
    assert!(!o.status.success());
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert!(err["message"].as_str().unwrap().contains("outside"));
    assert!(out2.join("error.json").exists());

    let broken = write(tmp.path(), "broken.csv", "x,y\n0.1,zz\n");
    let o = pointassim(&["locate", "--points", &broken, "--config", &cfg, "--out", out2.to_str().unwrap()]);
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["line"], 2);
}
