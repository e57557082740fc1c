mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::problem_path;
use iqc_peak::io::{CertificateDoc, Outcome, Report};
use iqc_peak::linalg::eye;
use serde_json::{json, Value};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iqc-peak")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("terminated by signal")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn doc(name: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(problem_path(name)).unwrap()).unwrap()
}

fn write(dir: &Path, name: &str, v: &Value) -> String {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p.to_string_lossy().into_owned()
}

fn tv_problem() -> String {
    problem_path("example1_tv_thm2").to_string_lossy().into_owned()
}

#[test]
fn malformed_block_exits_one_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let mut d = doc("example1_tv_thm2");
    d["plant"]["Dzw"] = json!([[1.0, -2.0, 0.0], [-4.0, 3.0, 0.0]]);
    let path = write(dir.path(), "bad.json", &d);
    let o = run(&["gain", &path]);
    assert_eq!(code(&o), 1, "{}", text(&o));
    assert!(text(&o).contains("`Dzw`"), "{}", text(&o));
}

#[test]
fn unknown_keys_need_lenient() {
    let dir = tempfile::tempdir().unwrap();
    let mut d = doc("example1_tv_thm2");
    d["options"]["colour"] = json!("blue");
    let path = write(dir.path(), "extra.json", &d);
    let o = run(&["gain", &path, "--rho-grid", "0.2105"]);
    assert_eq!(code(&o), 1, "{}", text(&o));
    assert!(text(&o).contains("colour"));
    let o = run(&["gain", &path, "--rho-grid", "0.2105", "--lenient"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(text(&o).contains("notice:") && text(&o).contains("colour"));
}

#[test]
fn unstable_plant_is_a_negative_result() {
    let dir = tempfile::tempdir().unwrap();
    let d = json!({
        "request": "gain",
        "dims": {"nx": 1, "np": 0, "nq": 0, "nw": 1, "nz": 1},
        "plant": {"A": [[1.5]], "Bw": [[1.0]], "Cz": [[1.0]]},
        "uncertainty": {"kind": "none"},
        "options": {"rho_grid": "0.1:0.9:5"}
    });
    let path = write(dir.path(), "unstable.json", &d);
    let o = run(&["gain", &path, "--json"]);
    assert_eq!(code(&o), 2, "{}", text(&o));
    let report = Report::parse(&String::from_utf8_lossy(&o.stdout)).unwrap();
    assert_eq!(report.outcome, Outcome::Infeasible);
    assert!(report.gain.is_none());
    assert!(report.notices.iter().any(|n| n.contains("destabilises")), "{:?}", report.notices);
}

#[test]
fn wrong_command_for_request_is_an_error() {
    let o = run(&["reach", &tv_problem()]);
    assert_eq!(code(&o), 1);
    assert!(text(&o).contains("`gain`"), "{}", text(&o));
}

#[test]
fn certificates_round_trip_through_check() {
    let dir = tempfile::tempdir().unwrap();
    let cert = dir.path().join("cert.json").to_string_lossy().into_owned();
    let report = dir.path().join("report.json").to_string_lossy().into_owned();
    let o = run(&["gain", &tv_problem(), "--rho-grid", "0.2105", "--cert-out", &cert, "--out", &report]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let r = Report::parse(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r.outcome, Outcome::Certified);

    let o = run(&["check", &cert, &tv_problem(), "--json"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let checked = Report::parse(&String::from_utf8_lossy(&o.stdout)).unwrap();
    assert_eq!(checked.outcome, Outcome::Pass);
    let suites: Vec<&str> = checked.checks.iter().map(|c| c.suite.as_str()).collect();
    for want in ["resubstitution", "iqc-residual", "dissipation", "gain-soundness"] {
        assert!(suites.contains(&want), "{suites:?}");
    }
    assert!(checked.checks.iter().all(|c| c.passed));

    // P + I breaks the storage inequality
    let CertificateDoc::Gain(mut g) = CertificateDoc::parse(&std::fs::read_to_string(&cert).unwrap()).unwrap() else {
        panic!("expected a gain certificate")
    };
    let p = g.values.get_mut("P").unwrap();
    *p += eye(p.nrows());
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, CertificateDoc::Gain(g).to_json()).unwrap();
    let o = run(&["check", &bad.to_string_lossy(), &tv_problem()]);
    assert_eq!(code(&o), 2, "{}", text(&o));
    assert!(text(&o).contains("check dissipation: FAIL"), "{}", text(&o));

    // a certificate of the wrong size is an input error
    let o = run(&["check", &cert, &problem_path("example2").to_string_lossy()]);
    assert_eq!(code(&o), 1, "{}", text(&o));
    assert!(text(&o).contains("dimension mismatch"), "{}", text(&o));
}

#[test]
fn reach_exits_zero_with_axes() {
    let p = problem_path("example2").to_string_lossy().into_owned();
    let o = run(&["reach", &p, "--rho-grid", "0.9216", "--lambda-grid", "0.2"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(text(&o).contains("axis 3: length"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["gain"])), 1);
    assert_eq!(code(&run(&["gain", &tv_problem(), "--variant", "thm7"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
}
