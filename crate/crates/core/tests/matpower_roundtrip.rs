mod common;

use std::time::Instant;

use common::{load, raw, read, CASES};
use gridpriv_core::matpower_io::{case_to_raw, format_number, parse_matpower, write_matpower, RawCase};
use proptest::prelude::*;

/// Rows of `mpc.<field>` counted straight from the text.
fn count_rows(text: &str, field: &str) -> usize {
    let head = format!("mpc.{field} = [");
    let start = text.find(&head).unwrap() + head.len();
    let body = &text[start..start + text[start..].find("];").unwrap()];
    body.lines()
        .map(|l| l.split('%').next().unwrap().trim())
        .filter(|l| !l.is_empty())
        .count()
}

#[test]
fn every_case_round_trips_exactly() {
    for name in CASES {
        let t = Instant::now();
        let first = raw(name);
        let second = parse_matpower(&write_matpower(&first)).unwrap();
        let dt = t.elapsed().as_secs_f64();
        assert_eq!(first, second, "{name}");
        assert!(dt < 1.0, "{name} took {dt:.2}s");
    }
}

#[test]
fn matrix_sizes_match_the_file() {
    for name in CASES {
        let text = read(name);
        let r = raw(name);
        assert_eq!(r.bus.len(), count_rows(&text, "bus"), "{name} bus");
        assert_eq!(r.gen.len(), count_rows(&text, "gen"), "{name} gen");
        assert_eq!(r.branch.len(), count_rows(&text, "branch"), "{name} branch");
    }
}

#[test]
fn rts_24_bus_summary() {
    let text = read("case24_ieee_rts");
    let case = load("case24_ieee_rts");
    assert_eq!(case.base_mva, 100.0);
    assert_eq!(case.buses.len(), 24);
    assert_eq!(case.branches.len(), count_rows(&text, "branch"));
    assert_eq!(case.generators.len(), count_rows(&text, "gen"));
    assert_eq!(case.branches.len(), 38);
    assert_eq!(case.generators.len(), 33);
}

#[test]
fn rts_24_bus_levels() {
    let case = load("case24_ieee_rts");
    let levels = case.voltage_levels();
    let kvs: Vec<f64> = levels.iter().map(|l| l.kv).collect();
    assert_eq!(kvs, vec![138.0, 230.0]);
    assert_eq!(levels.iter().map(|l| l.len()).sum::<usize>(), 38);
    // a branch belongs to the higher of its two end voltages
    let kv: std::collections::HashMap<usize, f64> = case.buses.iter().map(|b| (b.id, b.base_kv)).collect();
    for (lv, level) in levels.iter().enumerate() {
        for &k in &level.branches {
            let br = &case.branches[k];
            assert_eq!(kv[&br.from_bus].max(kv[&br.to_bus]), levels[lv].kv);
        }
    }
}

#[test]
fn writing_a_release_touches_only_r_x_b() {
    let template = raw("case30");
    let mut case = load("case30");
    for br in &mut case.branches {
        br.r *= 1.5;
        br.x *= 0.75;
        br.b_sh += 0.01;
    }
    let out = case_to_raw(&case, &template).unwrap();
    assert_eq!(out.bus, template.bus);
    assert_eq!(out.gen, template.gen);
    assert_eq!(out.gencost, template.gencost);
    for (k, (a, b)) in out.branch.iter().zip(&template.branch).enumerate() {
        for c in 0..a.len() {
            if (2..=4).contains(&c) {
                continue;
            }
            assert_eq!(a[c].to_bits(), b[c].to_bits(), "row {k} col {c}");
        }
    }
    let reparsed = parse_matpower(&write_matpower(&out)).unwrap();
    assert_eq!(reparsed, out);
}

#[test]
fn unparseable_input_is_an_error() {
    assert!(parse_matpower("function mpc = x\nmpc.bus = [1 2 3;\n").is_err());
    assert!(parse_matpower("mpc.baseMVA = 100;").is_err());
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        any::<f64>().prop_filter("finite", |v| v.is_finite()),
        -1e4..1e4f64,
        Just(0.0),
        Just(-0.0),
    ]
}

fn matrix(cols: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(finite(), cols), 1..6)
}

proptest! {
    #[test]
    fn formatted_numbers_parse_back(v in finite()) {
        let back: f64 = format_number(v).parse().unwrap();
        prop_assert_eq!(back, v);
    }

    #[test]
    fn random_matrices_round_trip(
        bus in matrix(13),
        gen in matrix(10),
        branch in matrix(13),
        base in 1.0..1e3f64,
    ) {
        let r = RawCase {
            function_name: "random".into(),
            base_mva: base,
            bus,
            gen,
            branch,
            gencost: Vec::new(),
        };
        let back = parse_matpower(&write_matpower(&r)).unwrap();
        prop_assert_eq!(back, r);
    }
}
