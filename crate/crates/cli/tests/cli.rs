use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sublab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sublab"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("run sublab")
}

const SMALL_JOB: &str = r#"{
  "model": {"kind": "heisenberg", "n": 1},
  "grid": {"box": [[0, 1], [0, 1], [0, 1]], "h": [0.125, 0.125, 0.0625]},
  "solver": {"k": 4},
  "checks": [
    {"family": "yang_type", "p": [1, 2]},
    {"family": "average_bound"},
    {"family": "power_bound"}
  ],
  "output": {"spectrum": "out/spectrum.json", "eigenvectors": "out/vectors.bin"}
}"#;

#[test]
fn malformed_config_exits_4_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("job.json"),
        r#"{"model": {"kind": "heisenberg", "n": 1}, "grid": {"box": [[0,1],[0,1],[0,1]], "h": 0.25}, "solvr": {}}"#,
    )
    .unwrap();
    let out = sublab(dir.path(), &["solve", "job.json"]);
    assert_eq!(out.status.code(), Some(4));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("solvr"), "{err}");
}

#[test]
fn missing_config_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = sublab(dir.path(), &["solve", "nope.json"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn hand_spectrum_fails_and_empty_check_list_passes() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("s.json"), r#"{"eigenvalues": [1, 5]}"#).unwrap();
    fs::write(
        dir.path().join("fail.json"),
        r#"{"model": {"kind": "heisenberg", "n": 1}, "grid": {"box": [[0,1],[0,1],[0,1]], "h": 0.25},
            "checks": [{"family": "average_bound", "k_max": 1}]}"#,
    )
    .unwrap();
    fs::write(
        dir.path().join("empty.json"),
        r#"{"model": {"kind": "heisenberg", "n": 1}, "grid": {"box": [[0,1],[0,1],[0,1]], "h": 0.25}}"#,
    )
    .unwrap();
    let out = sublab(dir.path(), &["check", "fail.json", "--spectrum", "s.json"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["hard_failures"], 1);
    assert!(fs::read_to_string(dir.path().join("report.csv")).unwrap().starts_with("family,"));

    let out = sublab(dir.path(), &["check", "empty.json", "--spectrum", "s.json"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn solve_then_check_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        fs::write(d.path().join("job.json"), SMALL_JOB).unwrap();
        let out = sublab(d.path(), &["solve", "job.json"]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["out/spectrum.json", "out/vectors.bin"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f} differs");
    }
    let out = sublab(a.path(), &["check", "job.json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.path().join("report.json")).unwrap()).unwrap();
    // k = 1..3: two yang entries, one average, one power per k.
    assert_eq!(report["checks"], 12);
}

#[test]
fn tension_with_cylinder_map() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("job.json"),
        r#"{"model": {"kind": "heisenberg", "n": 1}, "grid": {"box": [[0,1],[0,1],[0,1]], "h": [0.125, 0.125, 0.0625]},
            "map": {"preset": "cylinder", "min_coverage": 0.1}}"#,
    )
    .unwrap();
    let out = sublab(dir.path(), &["tension", "job.json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("tension.json")).unwrap()).unwrap();
    assert!(r["trusted_nodes"].as_u64().unwrap() > 0);
    assert!(r["tension_max"].as_f64().unwrap() > 0.0);
}

#[test]
fn tension_rejects_too_few_components() {
    let dir = tempfile::tempdir().unwrap();
    let v = dir.path().join("map.bin");
    // Write a one-component SBVC block by hand over the 7·7·15 unknowns.
    let n: u64 = 7 * 7 * 15;
    let mut bytes = b"SBVC".to_vec();
    bytes.extend(1u32.to_le_bytes());
    bytes.extend(n.to_le_bytes());
    bytes.extend(1u64.to_le_bytes());
    for _ in 0..n {
        bytes.extend(0.0f64.to_le_bytes());
    }
    fs::write(&v, bytes).unwrap();
    fs::write(
        dir.path().join("job.json"),
        r#"{"model": {"kind": "heisenberg", "n": 1}, "grid": {"box": [[0,1],[0,1],[0,1]], "h": [0.125, 0.125, 0.0625]},
            "map": {"file": "map.bin", "target": {"kind": "euclidean", "m": 1}}}"#,
    )
    .unwrap();
    let out = sublab(dir.path(), &["tension", "job.json"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn lemma_lab_reports_no_failures() {
    let dir = tempfile::tempdir().unwrap();
    let out = sublab(dir.path(), &["lemma-lab", "--dim", "8", "--trials", "40", "--p", "0.5,2,3", "--out", "lab.json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("lab.json")).unwrap()).unwrap();
    assert_eq!(r["failures"], 0);
}

#[test]
fn sweep_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("job.json"),
        r#"{"model": {"kind": "abelian", "d": 2}, "grid": {"box": [[0,1],[0,1]], "h": 0.125},
            "solver": {"k": 2}, "sweep": {"levels": 3, "reference": [19.739208802178716, 49.34802200544679]}}"#,
    )
    .unwrap();
    let out = sublab(dir.path(), &["sweep", "job.json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("level,h,unknowns,converged,lambda_1,lambda_2,order_1,order_2"));
    let last: Vec<&str> = lines[3].split(',').collect();
    let order: f64 = last[6].parse().unwrap();
    assert!((order - 2.0).abs() < 0.1, "{order}");
}
