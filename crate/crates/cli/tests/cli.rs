//! End-to-end runs of the `bdrelay` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const JOINT: &str = r#"
[channel]
omega1 = 1.0
omega2 = 1.0
seed = 11

[power]
kind = "joint"
total_db = 10.0

[run]
eta = 0.5
slots = 50000
sample_size = 20000
benchmark_slots = 2000
"#;

const FIXED: &str = r#"
[channel]
omega1 = 1.5
omega2 = 0.5
seed = 5

[power]
kind = "fixed"
p_db = 10.0

[run]
eta = "grid"
grid_points = 3
slots = 50000
sample_size = 20000
benchmark_slots = 2000
subset = "tdbc"
"#;

fn bdrelay(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bdrelay"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Data rows of a table, keyed by column name.
fn rows(path: &Path) -> Vec<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
    lines
        .map(|l| {
            header
                .iter()
                .cloned()
                .zip(l.split(',').map(String::from))
                .collect()
        })
        .collect()
}

fn field<'a>(row: &'a [(String, String)], name: &str) -> &'a str {
    &row.iter()
        .find(|(k, _)| k == name)
        .unwrap_or_else(|| panic!("no column {name}"))
        .1
}

#[test]
fn same_config_gives_identical_files() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "fixed.toml", FIXED);
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    assert_ok(&bdrelay(&["region", "--config", s(&cfg), "--out", s(&a)]));
    assert_ok(&bdrelay(&["region", "--config", s(&cfg), "--out", s(&b)]));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let text = std::fs::read_to_string(&a).unwrap();
    assert!(text.starts_with(&format!("# tool: bdrelay {}\n", env!("CARGO_PKG_VERSION"))));
    assert!(text.contains("# config_hash: "));
    let table = rows(&a);
    // Three adaptive points and three per schedule for the conventional subset.
    assert_eq!(table.len(), 9);
    for r in &table {
        assert_eq!(field(r, "seed"), "5");
        assert_eq!(field(r, "status"), "ok");
        assert_eq!(field(r, "calibration_hash").len(), 16);
    }
}

#[test]
fn region_columns_are_complete() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "fixed.toml", FIXED);
    let out = dir.path().join("r.csv");
    assert_ok(&bdrelay(&["region", "--config", s(&cfg), "--out", s(&out)]));
    let r = &rows(&out)[0];
    for col in [
        "eta",
        "r12",
        "r21",
        "mode_freq_1",
        "mode_freq_2",
        "mode_freq_3",
        "mode_freq_4",
        "mode_freq_5",
        "mode_freq_6",
        "pbar_total",
        "delay1",
        "delay2",
        "residual_c1",
        "residual_c2",
    ] {
        field(r, col);
    }
    let freq: f64 = (1..=6)
        .map(|k| field(r, &format!("mode_freq_{k}")).parse::<f64>().unwrap())
        .sum();
    assert!((freq - 1.0).abs() < 1e-9);
}

#[test]
fn saved_weights_reproduce_the_run() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "joint.toml", JOINT);
    let weights = dir.path().join("w.toml");
    assert_ok(&bdrelay(&[
        "calibrate",
        "--config",
        s(&cfg),
        "--out",
        s(&weights),
    ]));
    let doc = std::fs::read_to_string(&weights).unwrap();
    assert!(doc.contains("region = \"S0\""), "{doc}");
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    assert_ok(&bdrelay(&[
        "simulate",
        "--config",
        s(&cfg),
        "--weights",
        s(&weights),
        "--out",
        s(&a),
    ]));
    assert_ok(&bdrelay(&["simulate", "--config", s(&cfg), "--out", s(&b)]));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn tampered_weights_are_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "joint.toml", JOINT);
    let weights = dir.path().join("w.toml");
    assert_ok(&bdrelay(&[
        "calibrate",
        "--config",
        s(&cfg),
        "--out",
        s(&weights),
    ]));
    let doc = std::fs::read_to_string(&weights).unwrap();
    let gamma_line = doc.lines().find(|l| l.starts_with("gamma = ")).unwrap();
    std::fs::write(&weights, doc.replace(gamma_line, "gamma = 0.5")).unwrap();
    let out = bdrelay(&["simulate", "--config", s(&cfg), "--weights", s(&weights)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("calibration hash"));
}

#[test]
fn malformed_config_exits_with_two() {
    let dir = TempDir::new().unwrap();
    let cases = [
        (JOINT.replace("total_db = 10.0", ""), "power.total_db"),
        (JOINT.replace("eta = 0.5", "eta = 1.5"), "run.eta"),
        (JOINT.replace("omega2 = 1.0", "omega2 = -1.0"), "omega2"),
        (format!("{JOINT}colour = 3\n"), "colour"),
    ];
    for (i, (text, name)) in cases.iter().enumerate() {
        let cfg = write(&dir, &format!("bad{i}.toml"), text);
        let out = bdrelay(&["simulate", "--config", s(&cfg)]);
        assert_eq!(out.status.code(), Some(2), "case {name}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(name), "stderr does not name {name}: {err}");
    }
    let out = bdrelay(&["simulate", "--config", s(&dir.path().join("missing.toml"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn calibration_failure_exits_with_three() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "joint.toml",
        &JOINT.replace("sample_size = 20000", "sample_size = 1"),
    );
    let out = bdrelay(&["calibrate", "--config", s(&cfg), "--eta", "0.3"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("residuals"));
}

#[test]
fn overrides_reach_the_output() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "joint.toml", JOINT);
    let out = dir.path().join("b.csv");
    assert_ok(&bdrelay(&[
        "benchmark",
        "--config",
        s(&cfg),
        "--seed",
        "77",
        "--eta",
        "0.25",
        "--subset",
        "1,2,4,5",
        "--out",
        s(&out),
    ]));
    let table = rows(&out);
    assert_eq!(table.len(), 2);
    for r in &table {
        assert_eq!(field(r, "seed"), "77");
        assert_eq!(field(r, "eta"), "0.25");
        assert_eq!(field(r, "subset"), "traditional");
        // A traditional schedule never uses the multiple-access or broadcast modes.
        assert_eq!(field(r, "mode_freq_3").parse::<f64>().unwrap(), 0.0);
        assert_eq!(field(r, "mode_freq_6").parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn delay_sweep_meets_its_target() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "joint.toml", JOINT);
    let out = dir.path().join("d.csv");
    assert_ok(&bdrelay(&[
        "delay-sweep",
        "--config",
        s(&cfg),
        "--delay",
        "5",
        "--out",
        s(&out),
    ]));
    let table = rows(&out);
    assert_eq!(table.len(), 1);
    let r = &table[0];
    let mean = 0.5
        * (field(r, "delay1").parse::<f64>().unwrap() + field(r, "delay2").parse::<f64>().unwrap());
    // The sizing search works on shorter runs, so allow some slack here.
    assert!((mean - 5.0).abs() < 0.5, "mean delay {mean}");
    assert_eq!(field(r, "protocol"), "joint-ams-delay");
}
