use std::path::Path;
use std::process::{Command, Output};

fn voltbound(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_voltbound")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn fixture(stem: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(format!("{stem}.toml")).display().to_string()
}

fn meta(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn simulate_without_fault_completes() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(fixture("smib")).unwrap();
    let cut = text.find("[fault]").unwrap();
    let rest = &text[cut..];
    let next = rest.find("\n[").map(|i| i + 1).unwrap_or(rest.len());
    let no_fault = format!("{}{}", &text[..cut], &rest[next..]);
    let scen = dir.path().join("nofault.toml");
    std::fs::write(&scen, no_fault).unwrap();
    let out = dir.path().join("out");
    let o = voltbound(&["simulate", "--scenario", scen.to_str().unwrap(), "--out", out.to_str().unwrap(), "--set", "t_end=1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(meta(&out.join("trajectory.meta")).contains("termination = Completed"));
    let csv = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert!(header.starts_with("time,delta_1,omega_1,Eq_1,E_fd_1,"));
    assert!(header.ends_with(",lambda1,g_inf"));
    assert!(!csv.contains('\r'));
}

#[test]
fn malformed_scenario_is_a_parse_error_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let scen = dir.path().join("bad.toml");
    std::fs::write(&scen, "name = \"bad\"\n[[line]]\nfrom = 1\n").unwrap();
    let out = dir.path().join("out");
    let o = voltbound(&["simulate", "--scenario", scen.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn unknown_override_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = voltbound(&["simulate", "--scenario", "smib", "--out", out.to_str().unwrap(), "--set", "eps_bogus=1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn saddle_on_a_stable_run_is_non_convergence() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = voltbound(&["saddle", "--scenario", "smib", "--out", out.to_str().unwrap(), "--set", "t_end=1"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(!out.exists());
}

#[test]
fn margin_reports_crossing_order() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = voltbound(&["margin", "--scenario", "three_machine", "--set", "rho=0.35", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = meta(&out.join("margin.meta"));
    let get = |k: &str| -> f64 {
        let line = m.lines().find(|l| l.starts_with(&format!("{k} = "))).unwrap();
        line.split(" = ").nth(1).unwrap().parse().unwrap()
    };
    assert!(get("cv_zero_crossing") < get("lambda1_crossing"));
    let csv = std::fs::read_to_string(out.join("margin.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "time,C_V,d_p,lambda1");
}

#[test]
fn outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = voltbound(&["report", "--scenario", "single_machine_load", "--out", out.to_str().unwrap(), "--seed", "7"]);
        assert!(o.status.success());
        (std::fs::read(out.join("report.csv")).unwrap(), std::fs::read(out.join("report.meta")).unwrap())
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn cct_of_smib() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = voltbound(&["cct", "--scenario", "smib", "--lo", "0.01", "--hi", "0.6", "--tol", "0.01", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = meta(&out.join("cct.meta"));
    assert!(m.contains("inverted = false"));
    let cct: f64 = m.lines().find(|l| l.starts_with("cct = ")).unwrap()[6..].parse().unwrap();
    assert!((cct - 0.127).abs() < 0.02, "{cct}");
}
