use fastr::io::{
    parse_device, parse_readout_config, parse_sweep, parse_topology, write_device, write_sweep,
    ReadoutConfig,
};
use fastr::shift_register::Direction;
use fastr::squid::{s21, Prototype, ResonanceProfile};
use fastr::Complex64;
use proptest::prelude::*;

#[test]
fn prototype_device_survives_json() {
    let dev = Prototype::new().device;
    assert_eq!(parse_device(&write_device(&dev)).unwrap(), dev);
}

#[test]
fn written_sweep_fits_back_to_its_profile() {
    let p = ResonanceProfile::from_loaded(6.2e9, 400.0, 500.0).unwrap();
    let sweep: Vec<(f64, Complex64)> = (0..301)
        .map(|i| {
            let f = p.f0 + p.linewidth * (i as f64 / 30.0 - 5.0);
            (f, s21(f, &p))
        })
        .collect();
    let text = format!("# synthetic\n{}", write_sweep(&sweep));
    let back = parse_sweep(&text).unwrap();
    assert_eq!(back, sweep);
    let fit = fastr::squid::fit_s21(&back).unwrap().profile;
    assert!((fit.f0 - p.f0).abs() < 1e-6 * p.linewidth);
}

#[test]
fn topology_with_breaks() {
    let t = parse_topology(r#"{"n_cells": 9, "stages_per_line": 12, "breaks": [{"line": 4, "stage": 3}]}"#)
        .unwrap();
    assert_eq!(t.n_lines(), 6);
    assert_eq!(t.reachable_copy_stages(4, Direction::Forward), 3);
    assert!(parse_topology(r#"{"n_cells": 10, "stages_per_line": 12}"#).is_err());
}

#[test]
fn readout_config_defaults_and_overrides() {
    assert_eq!(parse_readout_config("{}").unwrap(), ReadoutConfig::default());
    let c = parse_readout_config(r#"{"lo_offset_hz": -7.5e8, "pg_dbm": -98}"#).unwrap();
    assert_eq!(c.pg_dbm, -98.0);
    assert!(parse_readout_config(r#"{"lo_offset_hz": 7.6e8}"#).is_err());
}

proptest! {
    #[test]
    fn sweep_roundtrip(points in proptest::collection::vec((1e9f64..1e10, -2.0f64..2.0, -2.0f64..2.0), 0..50)) {
        let sweep: Vec<(f64, Complex64)> = points.iter().map(|&(f, re, im)| (f, Complex64::new(re, im))).collect();
        prop_assert_eq!(parse_sweep(&write_sweep(&sweep)).unwrap(), sweep);
    }
}
