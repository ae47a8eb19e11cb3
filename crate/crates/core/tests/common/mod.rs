#![allow(dead_code)]

use std::path::PathBuf;

use gridpriv_core::matpower_io::{parse_matpower, raw_to_case, RawCase};
use gridpriv_core::net_model::NetworkCase;

pub const CASES: [&str; 9] = [
    "case5",
    "case9",
    "case14",
    "case24_ieee_rts",
    "case30",
    "case39",
    "case57",
    "case118",
    "case300",
];

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(format!("{name}.m"))
}

pub fn read(name: &str) -> String {
    std::fs::read_to_string(data_path(name)).unwrap()
}

pub fn raw(name: &str) -> RawCase {
    parse_matpower(&read(name)).unwrap()
}

pub fn load(name: &str) -> NetworkCase {
    raw_to_case(&raw(name), name).unwrap()
}

pub fn median(mut v: Vec<f64>) -> f64 {
    assert!(!v.is_empty());
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
