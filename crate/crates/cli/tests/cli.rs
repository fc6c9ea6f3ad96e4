use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn qrelay(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qrelay")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.cfg");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn summary(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

/// Low gain keeps the photon cutoff small so Monte Carlo runs stay quick.
const SMALL: &str = "pair_mean = 0.002\nmax_photons = auto\n";

#[test]
fn limits_table() {
    let s = summary(&qrelay(&["limits"]));
    let limits = s["limits"].as_array().unwrap();
    assert_eq!(limits[0]["fidelity"].as_f64().unwrap(), 2.0 / 3.0);
    assert!((limits[1]["fidelity"].as_f64().unwrap() - 5.0 / 6.0).abs() < 1e-15);
}

#[test]
fn empty_config_equals_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "# nothing set\n");
    let with = qrelay(&["validate-timing", "--config", &cfg]);
    let without = qrelay(&["validate-timing"]);
    assert_eq!(summary(&with), summary(&without));
}

#[test]
fn config_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "spool_bob_m = 0\n");
    let s = summary(&qrelay(&["validate-timing", "--config", &cfg]));
    assert!(s["slack_ns"].as_f64().unwrap() < 0.0);
    assert_eq!(s["feasible"], Value::Bool(false));
    assert_eq!(s["config"]["spool_bob_m"], "0");
}

#[test]
fn schema_errors_exit_2_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    for (text, key) in [("pair_mean_epr = -0.1\n", "pair_mean_epr"), ("colour = blue\n", "colour")] {
        let cfg = write_config(dir.path(), text);
        let out = qrelay(&["noise", "--config", &cfg]);
        assert_eq!(out.status.code(), Some(2), "{text}");
        assert!(String::from_utf8_lossy(&out.stderr).contains(key));
    }
    let missing = dir.path().join("absent.cfg");
    assert_eq!(qrelay(&["noise", "--config", missing.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(qrelay(&["teleport", "--mode", "guess"]).status.code(), Some(2));
    assert_eq!(qrelay(&["teleport", "--points", "3"]).status.code(), Some(2));
}

#[test]
fn numerical_failures_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "dark_ge = 0\ndark_ingaas = 0\ndark_herald = 0\ndark_bob = 0\ncalibrate_ratio = 1\n",
    );
    let out = qrelay(&["noise", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn teleport_summary_and_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("out");
    let s = summary(&qrelay(&["teleport", "--config", &cfg, "--heralded", "--out", out_dir.to_str().unwrap()]));
    let v = s["V_raw"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&v));
    assert!(s["sigma_V_raw"].as_f64().unwrap() > 0.0);
    assert_eq!(s["config"]["heralded"], "true");
    let csv = std::fs::read_to_string(out_dir.join("teleport.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("phi_b_rad,counts,expected_prob"));
    assert_eq!(lines.count(), 16);
    let json: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("teleport.json")).unwrap()).unwrap();
    assert_eq!(json, s);
}

#[test]
fn monte_carlo_output_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let run = |seed: &str, name: &str| {
        let out = dir.path().join(name);
        let args = [
            "teleport", "--config", &cfg, "--mode", "montecarlo", "--trials", "20000", "--points", "8", "--seed", seed,
            "--out", out.to_str().unwrap(),
        ];
        summary(&qrelay(&args));
        std::fs::read(out.join("teleport.csv")).unwrap()
    };
    let a = run("5", "a");
    assert_eq!(a, run("5", "b"));
    assert_ne!(a, run("6", "c"));
}

#[test]
fn mandel_and_stability_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}stability_hours = 2\ncontroller = false\n"));
    let out = dir.path().join("out");
    let m = summary(&qrelay(&["mandel", "--config", &cfg, "--points", "21", "--out", out.to_str().unwrap()]));
    assert!((m["dip_fwhm_um"].as_f64().unwrap() - 144.0).abs() < 1.0);
    let csv = std::fs::read_to_string(out.join("mandel.csv")).unwrap();
    assert!(csv.starts_with("delta_x_um,coinc_short,coinc_long\n"));
    assert_eq!(csv.lines().count(), 22);

    let s = summary(&qrelay(&["stability", "--config", &cfg, "--out", out.to_str().unwrap()]));
    assert_eq!(s["controller"], Value::Bool(false));
    assert_eq!(s["samples"].as_u64(), Some(121));
    let csv = std::fs::read_to_string(out.join("stability.csv")).unwrap();
    assert!(csv.starts_with("t_s,delta_x_um,rep_rate_hz,motor_um,norm_coincidences\n"));
}
