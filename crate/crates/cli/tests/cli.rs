use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(args: &[&str], cfg: Option<&Path>, out: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dichotomia"));
    cmd.args(args).arg("--out").arg(out).env_remove("DICHOTOMIA_THREADS");
    if let Some(c) = cfg {
        cmd.arg("--config").arg(c);
    }
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn missing_generator_is_malformed_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["spectrum"], Some(&fixture("missing_generator.json")), dir.path());
    assert_eq!(code(&o), 64);
    assert!(String::from_utf8_lossy(&o.stderr).contains("generator"));
}

#[test]
fn bad_flags_are_malformed_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("constant_diag.json");
    assert_eq!(code(&run(&["spectrum", "--grid", "0.1:x:5"], Some(&cfg), dir.path())), 64);
    assert_eq!(code(&run(&["spectrum", "--bogus"], Some(&cfg), dir.path())), 64);
    assert_eq!(code(&run(&["spectrum"], None, dir.path())), 64);
    assert_eq!(code(&run(&["spectrum", "--tol", "-1"], Some(&cfg), dir.path())), 64);
}

#[test]
fn narrow_grid_is_coverage_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["spectrum", "--grid", "1:2:10"], Some(&config("constant_diag.json")), dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn gap_check_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let points = fixture("spectrum_points.json");
    let wide = fixture("spectrum_wide.json");
    let o = run(&["gap-check", "--spectrum", points.to_str().unwrap()], None, dir.path());
    assert_eq!(code(&o), 0);
    let gap = json(dir.path().join("gap.json"));
    assert_eq!(gap["result"]["all_pass"], true);
    let o = run(&["gap-check", "--spectrum", wide.to_str().unwrap()], None, dir.path());
    assert_eq!(code(&o), 3);
    assert_eq!(json(dir.path().join("gap.json"))["result"]["gb_main"], false);
    let o = run(&["gap-check"], Some(&fixture("contraction_only.json")), dir.path());
    assert_eq!(code(&o), 4);
}

#[test]
fn gap_check_reads_spectrum_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("constant_diag.json");
    assert_eq!(code(&run(&["spectrum"], Some(&cfg), dir.path())), 0);
    let report = dir.path().join("spectrum.json");
    let o = run(&["gap-check", "--spectrum", report.to_str().unwrap()], None, dir.path());
    assert_eq!(code(&o), 0);
}

#[test]
fn reports_are_versioned_and_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = config("periodic2.json");
    assert_eq!(code(&run(&["spectrum", "--threads", "1"], Some(&cfg), a.path())), 0);
    assert_eq!(code(&run(&["spectrum"], Some(&cfg), b.path())), 0);
    for f in ["spectrum.json", "spectrum.csv"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
    let rep = json(a.path().join("spectrum.json"));
    assert_eq!(rep["schema_version"], 1);
    assert_eq!(rep["kind"], "spectrum");
    assert_eq!(rep["tolerances"]["tol"], 1e-3);
    let csv = std::fs::read_to_string(a.path().join("spectrum.csv")).unwrap();
    assert!(csv.starts_with("a,dim,accept\n"));
}

#[test]
fn conjugate_canonical_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &["conjugate", "--points", "5", "--m-min", "-2", "--m-max", "2"],
        Some(&config("constant_diag.json")),
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rep = json(dir.path().join("residuals.json"));
    assert!(rep["result"]["max_residual"].as_f64().unwrap() <= 1e-6);
    assert_eq!(rep["tolerances"]["residual_tol"], 1e-6);
    let table = std::fs::read_to_string(dir.path().join("conjugacy.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 5 * 25);
    let per_index = std::fs::read_to_string(dir.path().join("residuals.csv")).unwrap();
    assert_eq!(per_index.lines().count(), 1 + 5);
}

#[test]
fn conjugate_large_eta_is_contraction_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["conjugate"], Some(&fixture("eta_large.json")), dir.path());
    assert_eq!(code(&o), 5, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn conjugate_without_nonlinearity_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &["conjugate", "--points", "7", "--m-min", "-1", "--m-max", "1"],
        Some(&fixture("zero_nonlinearity.json")),
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    let table = std::fs::read_to_string(dir.path().join("conjugacy.csv")).unwrap();
    for line in table.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[1], f[3], "{line}");
        assert_eq!(f[2], f[4], "{line}");
    }
}

#[test]
fn conjugate_refuses_without_gap() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["conjugate"], Some(&fixture("contraction_only.json")), dir.path());
    assert_eq!(code(&o), 4);
    assert!(!dir.path().join("conjugacy.csv").exists());
}

#[test]
fn verify_passes_and_detects_fault() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("constant_diag.json");
    assert_eq!(code(&run(&["verify"], Some(&cfg), dir.path())), 0);
    let rep = json(dir.path().join("verify.json"));
    assert_eq!(rep["result"]["all_pass"], true);
    let o = run(&["verify", "--inject-fault"], Some(&cfg), dir.path());
    assert_eq!(code(&o), 1);
    let rep = json(dir.path().join("verify.json"));
    let checks = rep["result"]["checks"].as_array().unwrap();
    let find = |n: &str| checks.iter().find(|c| c["name"] == n).unwrap()["pass"].clone();
    assert_eq!(find("cocycle-identity"), false);
    assert_eq!(find("dim-monotonicity"), true);
}

#[test]
fn certify_and_operator_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["certify"], Some(&config("nonuniform_scalar.json")), dir.path());
    assert_eq!(code(&o), 0);
    let proj = std::fs::read_to_string(dir.path().join("projections.csv")).unwrap();
    assert!(proj.lines().count() > 1);
    let o = run(
        &["operator", "--scale", "1", "--window", "3"],
        Some(&config("constant_diag.json")),
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    let trip = std::fs::read_to_string(dir.path().join("operator.txt")).unwrap();
    // 7 blocks of 2x2: 14 diagonal entries plus 6 subdiagonal blocks with 2
    // nonzeros each.
    assert_eq!(trip.lines().next().unwrap(), "14 14 26");
    assert_eq!(trip.lines().count(), 1 + 26);
}

#[test]
fn foliation_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &["foliation", "--x", "0.3,0.2", "--y", "0.1,0"],
        Some(&config("constant_diag.json")),
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rep = json(dir.path().join("foliation.json"));
    assert!(rep["result"]["residual"].as_f64().unwrap() <= 1e-8);
    let trace = std::fs::read_to_string(dir.path().join("foliation.csv")).unwrap();
    assert!(trace.starts_with("n,norm_q,weighted\n"));
    let o = run(
        &["foliation", "--x", "0.3", "--y", "0.1,0"],
        Some(&config("constant_diag.json")),
        dir.path(),
    );
    assert_eq!(code(&o), 64);
}
