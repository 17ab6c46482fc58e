//! End-to-end behaviour of the `retarded-ou` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_retarded-ou");

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env_remove("RETARDED_OU_OUT");
    if let Some(dir) = env_out {
        cmd.env("RETARDED_OU_OUT", dir);
    }
    cmd.output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SCALAR: &str = r#"{
  "kind": "green",
  "model": {"eigenvalues": [0.0]},
  "delay": {"r": 1.0, "b1": {"identity": 1.0}, "b0": "zero", "kernel": "zero"},
  "numerics": {"horizon": 2.0, "m": 100}
}"#;

#[test]
fn green_scalar_table_has_exact_value_at_two() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("g");
    let cfg = configs().join("green_scalar.json");
    let o = run(&["green", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("green.csv")).unwrap();
    let row = csv.lines().find(|l| l.starts_with("2.0000000000000000e0,")).unwrap();
    let g: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
    assert!((g - 2.0).abs() < 1e-12, "{row}");
    let rep = report(&out);
    assert_eq!(rep["kind"], "green");
    assert_eq!(rep["pass"], true);
    assert!(rep["paper_checks"].as_array().unwrap().iter().all(|c| c["name"].is_string() && c["pass"] == true));
}

#[test]
fn zero_diffusion_bdg_ratio_is_zero() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("b");
    let cfg = configs().join("bdg_zero.json");
    let o = run(&["bdg", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(report(&out)["ratio"].as_f64(), Some(0.0));
}

#[test]
fn malformed_kernel_fails_without_output() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("m");
    let cfg = configs().join("malformed_kernel.json");
    let o = run(&["green", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 0);
}

#[test]
fn parse_error_names_field_path_and_line() {
    let tmp = TempDir::new().unwrap();
    let bad = SCALAR.replace(r#""r": 1.0"#, r#""r": "one""#);
    let cfg = write_config(tmp.path(), "bad.json", &bad);
    let out = tmp.path().join("o");
    let o = run(&["green", "--config", &cfg, "--out", out.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("delay.r") && msg.contains("line 4"), "{msg}");
    assert!(!out.exists());
}

#[test]
fn window_violation_quotes_both_windows() {
    let tmp = TempDir::new().unwrap();
    let text = fs::read_to_string(configs().join("simulate_delay.json"))
        .unwrap()
        .replace(r#""alpha": 0.3"#, r#""alpha": 0.1"#);
    let cfg = write_config(tmp.path(), "w.json", &text);
    let out = tmp.path().join("o");
    let o = run(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("(1/p, 1/2)") && msg.contains("(p-2)/(2p)"), "{msg}");
    assert!(!out.exists());
}

#[test]
fn kind_mismatch_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let cfg = configs().join("green_scalar.json");
    let out = tmp.path().join("o");
    let o = run(&["deterministic", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("green"));
    assert!(!out.exists());
}

#[test]
fn output_directory_precedence() {
    let tmp = TempDir::new().unwrap();
    let from_cfg = tmp.path().join("cfg");
    let from_env = tmp.path().join("env");
    let from_flag = tmp.path().join("flag");
    let text = SCALAR.replacen('{', &format!("{{\n  \"output\": {:?},", from_cfg.to_str().unwrap()), 1);
    let cfg = write_config(tmp.path(), "c.json", &text);

    assert_eq!(run(&["green", "--config", &cfg], None).status.code(), Some(0));
    assert!(from_cfg.join("report.json").exists());

    assert_eq!(run(&["green", "--config", &cfg], Some(&from_env)).status.code(), Some(0));
    assert!(from_env.join("report.json").exists());

    let o = run(&["green", "--config", &cfg, "--out", from_flag.to_str().unwrap()], Some(&from_env));
    assert_eq!(o.status.code(), Some(0));
    assert!(from_flag.join("report.json").exists());
    assert_eq!(
        fs::read(from_flag.join("green.csv")).unwrap(),
        fs::read(from_cfg.join("green.csv")).unwrap()
    );

    let hidden: Vec<_> = fs::read_dir(tmp.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with('.'))
        .collect();
    assert!(hidden.is_empty());
}

#[test]
fn missing_output_directory_is_an_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", SCALAR);
    let o = run(&["green", "--config", &cfg], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("RETARDED_OU_OUT"));
}

#[test]
fn seed_flag_overrides_config_seed() {
    let tmp = TempDir::new().unwrap();
    let cfg = configs().join("bdg_adapted.json");
    let text = fs::read_to_string(&cfg).unwrap().replace(r#""paths": 1000"#, r#""paths": 50"#).replace("[16, 32, 64]", "[8, 16]");
    let cfg = write_config(tmp.path(), "s.json", &text);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = tmp.path().join("c");
    run(&["bdg", "--config", &cfg, "--out", a.to_str().unwrap(), "--seed", "11"], None);
    run(&["bdg", "--config", &cfg, "--out", b.to_str().unwrap(), "--seed", "11"], None);
    run(&["bdg", "--config", &cfg, "--out", c.to_str().unwrap(), "--seed", "12"], None);
    let (ra, rb, rc) = (report(&a), report(&b), report(&c));
    assert_eq!(ra["seed"], 11);
    assert_eq!(ra["config"]["noise"]["seed"], 11);
    assert_eq!(rb["seed"], 11);
    assert_eq!(rc["seed"], 12);
    assert_eq!(fs::read(a.join("bdg.csv")).unwrap(), fs::read(b.join("bdg.csv")).unwrap());
    assert_ne!(fs::read(a.join("bdg.csv")).unwrap(), fs::read(c.join("bdg.csv")).unwrap());
}

#[test]
fn failing_check_exits_one_and_still_writes() {
    let tmp = TempDir::new().unwrap();
    let text = fs::read_to_string(configs().join("regularity.json"))
        .unwrap()
        .replace(r#""paths": 1000"#, r#""paths": 100"#)
        .replace(r#""m": 256"#, r#""m": 64"#)
        .replace(r#""lags": 6"#, r#""lags": 4, "target_band": [0.9, 0.95]"#);
    let cfg = write_config(tmp.path(), "f.json", &text);
    let out = tmp.path().join("o");
    let o = run(&["regularity", "--config", &cfg, "--out", out.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("FAIL holder_band"));
    let rep = report(&out);
    assert_eq!(rep["pass"], false);
    let band = rep["paper_checks"].as_array().unwrap().iter().find(|c| c["name"] == "holder_band").unwrap();
    assert_eq!(band["pass"], false);
    assert!(out.join("structure.csv").exists());
}

#[test]
fn unknown_subcommand_and_missing_config_exit_two() {
    assert_eq!(run(&["nonsense"], None).status.code(), Some(2));
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("none.json");
    let o = run(&["green", "--config", missing.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
}
