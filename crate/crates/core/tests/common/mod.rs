#![allow(dead_code)]

use std::path::PathBuf;

use kgp_core::table::{load_csv, Table};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn data(name: &str) -> PathBuf {
    fixtures().join("data").join(format!("{name}.csv"))
}

pub fn knowledge(name: &str) -> PathBuf {
    fixtures().join("knowledge").join(format!("{name}.toml"))
}

pub fn config(name: &str) -> PathBuf {
    fixtures().join("configs").join(format!("{name}.toml"))
}

pub fn load(name: &str) -> Table {
    let hint = (name == "flows").then(|| kgp_core::table::SchemaHint::categorical(&["protocol"]));
    load_csv(data(name), hint.as_ref()).unwrap()
}

pub const ALL_FIXTURES: &[&str] = &[
    "sigmoid_2d",
    "bohachevsky_3d",
    "frac_power",
    "cubic",
    "cubic_rising",
    "x_plus_2sin",
    "quartic",
    "dino_slice",
    "o2_like",
    "flows",
];

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}
