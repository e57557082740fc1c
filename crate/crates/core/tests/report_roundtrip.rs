mod common;

use std::process::Command;

use common::problem_path;
use iqc_peak::io::Report;
use serde_json::Value;

fn report_json(args: &[&str]) -> String {
    let o = Command::new(env!("CARGO_BIN_EXE_iqc-peak")).args(args).arg("--json").output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

/// Numbers in free text, skipping the ordinal after "axis".
fn numbers_in(text: &str) -> Vec<f64> {
    let mut out = Vec::new();
    let mut prev = "";
    for tok in text.split(|c: char| c.is_whitespace() || matches!(c, ',' | '[' | ']' | '(' | ')' | ';' | ':' | '`')) {
        if !tok.is_empty() {
            if prev != "axis" {
                if let Ok(v) = tok.parse::<f64>() {
                    out.push(v);
                }
            }
            prev = tok;
        }
    }
    out
}

fn collect(v: &Value, out: &mut Vec<f64>) {
    match v {
        Value::Number(n) => out.push(n.as_f64().unwrap()),
        Value::String(s) => out.extend(numbers_in(s)),
        Value::Array(a) => a.iter().for_each(|x| collect(x, out)),
        Value::Object(o) => o.values().for_each(|x| collect(x, out)),
        _ => {}
    }
}

fn assert_round_trip(json: &str) {
    let report = Report::parse(json).unwrap();
    let again = Report::parse(&report.to_json()).unwrap();
    assert_eq!(report, again);
    assert_eq!(report.render(), again.render());

    let mut known = Vec::new();
    collect(&serde_json::from_str(json).unwrap(), &mut known);
    for v in numbers_in(&report.render()) {
        assert!(known.iter().any(|k| *k == v), "rendered {v} is not in the document");
    }
}

#[test]
fn gain_report_round_trips() {
    let p = problem_path("example1_tv_thm2");
    assert_round_trip(&report_json(&["gain", &p.to_string_lossy(), "--rho-grid", "0.2:0.22:3"]));
}

#[test]
fn reach_report_round_trips() {
    let p = problem_path("example2");
    assert_round_trip(&report_json(&["reach", &p.to_string_lossy(), "--rho-grid", "0.9216", "--lambda-grid", "0.2"]));
}
