mod common;

use common::problem_path;
use iqc_peak::analysis::{analyze_gain, GainRequest, SearchGrid};
use iqc_peak::io::{parse_grid, CertificateDoc, ProblemFile, Report};
use iqc_peak::iqc::UncertaintySpec;
use iqc_peak::linalg::from_rows;
use iqc_peak::system::{make_plant, PlantBlocks, PlantDims};
use proptest::prelude::*;
use serde_json::Value;

fn seed_doc() -> String {
    std::fs::read_to_string(problem_path("example1_tv_thm2")).unwrap()
}

/// Replaces the value at a pseudo-random path of `v` with `leaf`.
fn mutate(v: &mut Value, mut choice: usize, leaf: Value) {
    match v {
        Value::Object(o) if !o.is_empty() => {
            let keys: Vec<String> = o.keys().cloned().collect();
            let k = &keys[choice % keys.len()];
            choice /= keys.len().max(1);
            if choice % 3 == 0 {
                o.insert(k.clone(), leaf);
            } else {
                mutate(o.get_mut(k).unwrap(), choice, leaf);
            }
        }
        Value::Array(a) if !a.is_empty() => {
            let n = a.len();
            match choice % 4 {
                0 => a[choice % n] = leaf,
                1 => {
                    a.pop();
                }
                _ => mutate(&mut a[choice % n], choice / n, leaf),
            }
        }
        other => *other = leaf,
    }
}

fn leaf() -> impl Strategy<Value = Value> {
    prop_oneof![
        Just(Value::Null),
        any::<bool>().prop_map(Value::Bool),
        any::<f64>().prop_map(|f| serde_json::Number::from_f64(f).map_or(Value::Null, Value::Number)),
        (-5i64..5).prop_map(|i| Value::from(i)),
        "[a-z]{0,6}".prop_map(Value::String),
        Just(serde_json::json!([[1.0, 2.0]])),
        Just(serde_json::json!([])),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn arbitrary_text_never_panics(text in ".{0,200}") {
        let _ = ProblemFile::parse(&text, true);
        let _ = ProblemFile::parse(&text, false);
        let _ = CertificateDoc::parse(&text);
        let _ = Report::parse(&text);
        let _ = parse_grid(&text, SearchGrid::rho_default());
    }

    #[test]
    fn mutated_problems_never_panic(choice in any::<usize>(), leaf in leaf(), strict in any::<bool>()) {
        let mut v: Value = serde_json::from_str(&seed_doc()).unwrap();
        mutate(&mut v, choice, leaf);
        if let Ok((file, _)) = ProblemFile::parse(&v.to_string(), strict) {
            if let Ok(p) = file.build() {
                let _ = p.gain_request();
                let _ = p.reach_request();
            }
        }
    }

    #[test]
    fn grids_stay_inside_their_bounds(lo in 0.01f64..0.5, width in 0.0f64..0.45, n in 2usize..12) {
        let hi = lo + width;
        let g = parse_grid(&format!("{lo}:{hi}:{n}"), SearchGrid::rho_default()).unwrap();
        for v in g.values() {
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// `x+ = a x + w, z = x` has peak-to-peak gain `sum |a|^k = 1 / (1 - |a|)`.
    #[test]
    fn scalar_bounds_are_sound_and_tight(a in -0.9f64..0.9) {
        let d = PlantDims { nx: 1, np: 0, nq: 0, nw: 1, nz: 1 };
        let mut b = PlantBlocks::zeros(d);
        b.a = from_rows(&[&[a]]);
        b.bw = from_rows(&[&[1.0]]);
        b.cz = from_rows(&[&[1.0]]);
        let plant = make_plant(b, d).unwrap();
        let exact: f64 = (0..2000).map(|k| a.abs().powi(k)).sum();
        let req = GainRequest { rho_grid: SearchGrid { lo: 0.005, hi: 0.995, points: 25, refine: 30, log: false }, ..GainRequest::default() };
        let g = analyze_gain(&plant, &UncertaintySpec::none(), &req).unwrap().certificate.gamma;
        prop_assert!(g >= exact * (1.0 - 1e-6), "gamma {} below exact {}", g, exact);
        prop_assert!(g <= exact * 1.01, "gamma {} far above exact {}", g, exact);
    }
}
