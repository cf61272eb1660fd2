use std::path::Path;
use std::process::{Command, Output};

fn lowmach(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lowmach")).args(args).output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("config.toml");
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_owned()
}

fn strip_timestamp(text: &str) -> String {
    text.lines().filter(|l| !l.starts_with("# generated")).collect::<Vec<_>>().join("\n")
}

const SMALL: &str = "[grid]\nn = 32\n[init]\nbudget = 1.0\nseed = 4\n[solver]\nt_end = 0.2\n";

#[test]
fn missing_required_key_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[solver]\nt_end = 1.0\n");
    let out = lowmach(&["--config", &cfg, "run"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("init.budget"));
}

#[test]
fn unknown_subcommand_exits_with_usage_code() {
    assert_eq!(lowmach(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn run_requires_a_config() {
    assert_eq!(lowmach(&["run"]).status.code(), Some(2));
}

#[test]
fn zero_budget_run_stays_at_equilibrium() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[grid]\nn = 32\n[init]\nbudget = 0.0\n[solver]\nt_end = 0.5\n");
    let out_dir = dir.path().join("out");
    let out = lowmach(&["--config", &cfg, "--out", out_dir.to_str().unwrap(), "run"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("diagnostics.csv")).unwrap();
    let mut rows = 0;
    for line in csv.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let bundle: f64 = cols[1].parse().unwrap();
        assert!(bundle.sqrt() < 1e-10, "{line}");
        rows += 1;
    }
    assert!(rows > 2);
}

#[test]
fn repeated_runs_give_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let mut texts = Vec::new();
    for name in ["a", "b"] {
        let o = dir.path().join(name);
        let out = lowmach(&["--config", &cfg, "--out", o.to_str().unwrap(), "run"]);
        assert_eq!(out.status.code(), Some(0));
        texts.push(strip_timestamp(&std::fs::read_to_string(o.join("diagnostics.csv")).unwrap()));
    }
    assert_eq!(texts[0], texts[1]);
}

#[test]
fn default_identities_pass() {
    let out = lowmach(&["verify-identities"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn corrupted_h5_fails_the_decomposition() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[verify]\nh5_coefficients = [6.0, 4.0, 1.5]\n");
    let out = lowmach(&["--config", &cfg, "verify-identities"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("planck_decomposition"));
}

#[test]
fn inconsistent_gas_fails_the_thermo_relation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[eos]\nkind = \"inconsistent\"\n");
    let out = lowmach(&["--config", &cfg, "verify-identities"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("thermo_relation"), "{err}");
}

#[test]
fn fit_reports_the_slope() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("pts.csv");
    std::fs::write(&p, "# points\ndelta,value\n0.2,0.08\n0.1,0.04\n0.05,0.02\n").unwrap();
    let out = lowmach(&["fit", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["slope"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn config_reference_parses_back() {
    let out = lowmach(&["config-reference"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    lowmach_cli::config::ExperimentConfig::from_toml_str(&text).unwrap();
}

#[test]
fn sweep_output_does_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let mut texts = Vec::new();
    for threads in ["1", "4"] {
        let o = dir.path().join(format!("t{threads}"));
        let out = lowmach(&["--config", &cfg, "--out", o.to_str().unwrap(), "--threads", threads, "sweep"]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        texts.push(strip_timestamp(&std::fs::read_to_string(o.join("sweep.csv")).unwrap()));
    }
    assert_eq!(texts[0], texts[1]);
}

#[test]
fn linearized_rows_are_tagged() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[linearized]\nn = 16\ndeltas = [0.2, 0.1, 0.05]\nhorizon = 0.2\n");
    let o = dir.path().join("lin");
    let out = lowmach(&["--config", &cfg, "--out", o.to_str().unwrap(), "linearized"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(o.join("linearized.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.ends_with(",linearized")), "{}", rows[0]);
}
