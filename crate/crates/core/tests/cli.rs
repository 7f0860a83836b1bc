use std::path::Path;
use std::process::{Command, Output};

fn heatlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_heatlab")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn identity_check_reports_small_gap() {
    let o = heatlab(&["identity-check", "--n", "1", "--gamma", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["command"], "identity-check");
    assert!(v["artifact_version"].is_string());
    let text = v["result"].to_string();
    let gap = v["result"]
        .as_array()
        .and_then(|rows| rows[0]["rel_gap"].as_f64())
        .or_else(|| v["result"]["rel_gap"].as_f64())
        .unwrap_or_else(|| panic!("no rel_gap in {text}"));
    assert!(gap <= 0.03, "{gap}");
}

#[test]
fn output_is_identical_across_runs_and_thread_counts() {
    let args = ["invariants", "--space", "lp:3:1", "--samples", "20000", "--seed", "7"];
    let a = heatlab(&args);
    let b = heatlab(&args);
    let mut two = args.to_vec();
    two.extend(["--threads", "2"]);
    let c = heatlab(&two);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stdout, c.stdout);
}

#[test]
fn wasserstein_files_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str, threads: &str| {
        let out = dir.path().join(sub);
        let o = heatlab(&[
            "wasserstein",
            "--directions",
            "8",
            "--atoms",
            "120",
            "--threads",
            threads,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(out.join("wasserstein.json")).unwrap()
    };
    assert_eq!(run("one", "1"), run("two", "2"));
}

#[test]
fn csv_output_has_a_header() {
    let o = heatlab(&["spectral", "--n", "1", "--gamma", "0.5,1", "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.contains("gamma"), "{header}");
    assert_eq!(lines.filter(|l| !l.is_empty()).count(), 2);
}

#[test]
fn config_file_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"space": {"kind": "lp", "dim": 2, "p": 1.0}, "samples": 5000}"#).unwrap();
    let o = heatlab(&["--config", cfg.to_str().unwrap(), "invariants"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["config"]["samples"], 5000);

    std::fs::write(&cfg, r#"{"samples": 5000, "bogus": 1}"#).unwrap();
    let o = heatlab(&["--config", cfg.to_str().unwrap(), "invariants"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));

    assert_eq!(heatlab(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(heatlab(&["evolute", "--t", "100"]).status.code(), Some(2));
    assert!(!Path::new("evolute.bin").exists());
}
