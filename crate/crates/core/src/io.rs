//! JSON and CSV exchange formats.
//!
//! Parsers accept untrusted text and return [`Error::Parse`] or
//! [`Error::InvalidParameter`] rather than panicking. Writers produce the
//! body only; callers prepend any header block.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::calibration::{ArrayCalibration, FrequencySurface};
use crate::metrology::Spectrum;
use crate::readout::ShotRecord;
use crate::shift_register::{LineBit, ProcessorTopology};
use crate::squid::{Device, ResonatorDesign, TlsLossModel};
use crate::{Error, Result};

fn parse_err(e: impl std::fmt::Display) -> Error {
    Error::Parse(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TlsJson {
    pub qi_lp: f64,
    pub qi_res: f64,
    pub e_sat_vpm: f64,
}

/// On-disk device description. Units are SI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceJson {
    pub cs_f: f64,
    pub cc_f: f64,
    pub lg_h: f64,
    pub ic_a: f64,
    pub d_m: f64,
    pub qc: f64,
    pub tls: TlsJson,
}

impl DeviceJson {
    pub fn into_device(self) -> Result<Device> {
        Ok(Device {
            design: ResonatorDesign::new(self.cs_f, self.cc_f, self.lg_h, self.ic_a, self.d_m, self.qc)?,
            tls: TlsLossModel::new(self.tls.qi_lp, self.tls.qi_res, self.tls.e_sat_vpm)?,
        })
    }

    pub fn from_device(device: &Device) -> Self {
        let d = &device.design;
        Self {
            cs_f: d.cs,
            cc_f: d.cc,
            lg_h: d.lg,
            ic_a: d.tune_squid.ic_per_junction,
            d_m: d.dielectric_thickness,
            qc: d.qc,
            tls: TlsJson {
                qi_lp: device.tls.qi_low_power,
                qi_res: device.tls.qi_residual,
                e_sat_vpm: device.tls.e_sat,
            },
        }
    }
}

pub fn parse_device(text: &str) -> Result<Device> {
    serde_json::from_str::<DeviceJson>(text)
        .map_err(parse_err)?
        .into_device()
}

pub fn write_device(device: &Device) -> String {
    let mut s = serde_json::to_string_pretty(&DeviceJson::from_device(device)).expect("plain data");
    s.push('\n');
    s
}

/// Both SQUIDs of a design share one junction critical current on disk.
pub fn uniform_junctions(design: &ResonatorDesign) -> bool {
    design.tune_squid == design.sense_squid
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

fn expect_headers(reader: &mut csv::Reader<&[u8]>, want: &[&str]) -> Result<()> {
    let got = reader.headers().map_err(parse_err)?;
    if got.iter().ne(want.iter().copied()) {
        return Err(Error::Parse(format!(
            "expected header `{}`, got `{}`",
            want.join(","),
            got.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(())
}

fn field(rec: &csv::StringRecord, i: usize, line: u64) -> Result<f64> {
    let raw = rec
        .get(i)
        .ok_or_else(|| Error::Parse(format!("line {line}: missing column {i}")))?;
    let v: f64 = raw
        .parse()
        .map_err(|_| Error::Parse(format!("line {line}: `{raw}` is not a number")))?;
    if !v.is_finite() {
        return Err(Error::Parse(format!("line {line}: non-finite value `{raw}`")));
    }
    Ok(v)
}

/// `freq_hz,re,im` rows; `#` lines are comments.
pub fn parse_sweep(text: &str) -> Result<Vec<(f64, Complex64)>> {
    let mut reader = csv_reader(text);
    expect_headers(&mut reader, &["freq_hz", "re", "im"])?;
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(parse_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 3 {
            return Err(Error::Parse(format!("line {line}: expected 3 columns, got {}", rec.len())));
        }
        out.push((field(&rec, 0, line)?, Complex64::new(field(&rec, 1, line)?, field(&rec, 2, line)?)));
    }
    Ok(out)
}

pub fn write_sweep(sweep: &[(f64, Complex64)]) -> String {
    let mut s = String::from("freq_hz,re,im\n");
    for (f, z) in sweep {
        let _ = writeln!(s, "{f},{},{}", z.re, z.im);
    }
    s
}

pub fn write_surface(surface: &FrequencySurface) -> String {
    let mut s = String::from("phi_tune,phi_sense,f0_hz\n");
    for (t, p, f) in surface.triples() {
        if f.is_nan() {
            let _ = writeln!(s, "{t},{p},");
        } else {
            let _ = writeln!(s, "{t},{p},{f}");
        }
    }
    s
}

/// Status column value for a device that could not be assigned.
pub fn failure_status(reason: &Error) -> &'static str {
    match reason {
        Error::TargetUnreachable { .. } => "target_unreachable",
        Error::ResponsivityUnreachable { .. } => "responsivity_unreachable",
        _ => "failed",
    }
}

/// One row per device, failures included with empty numeric fields.
pub fn write_assignments(cal: &ArrayCalibration) -> String {
    let mut rows: Vec<(usize, String)> = cal
        .assignments
        .iter()
        .map(|a| {
            (
                a.device_id,
                format!(
                    "{},{},{},{},{},{},{},ok",
                    a.device_id,
                    a.bias.phi_tune,
                    a.bias.phi_sense,
                    a.f0_hz,
                    a.linewidth_hz,
                    a.responsivity,
                    a.f_residual_hz
                ),
            )
        })
        .collect();
    for f in &cal.failures {
        let status = failure_status(&f.reason);
        rows.push((f.device_id, format!("{},,,,,,,{status}", f.device_id)));
    }
    rows.sort_by_key(|r| r.0);
    let mut s = String::from(
        "device_id,phi_tune,phi_sense,f0_hz,linewidth_hz,responsivity_lw,f_residual_hz,status\n",
    );
    for (_, r) in rows {
        s.push_str(&r);
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BreakJson {
    pub line: usize,
    pub stage: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyJson {
    pub n_cells: u64,
    pub stages_per_line: usize,
    #[serde(default)]
    pub breaks: Vec<BreakJson>,
}

/// Largest accepted line length; keeps hostile inputs from allocating
/// unbounded memory.
pub const MAX_STAGES_PER_LINE: usize = 1 << 20;
pub const MAX_CELLS: u64 = 1 << 20;

impl TopologyJson {
    pub fn into_topology(self) -> Result<ProcessorTopology> {
        if self.stages_per_line > MAX_STAGES_PER_LINE || self.n_cells > MAX_CELLS {
            return Err(Error::invalid("topology too large"));
        }
        let breaks: Vec<(usize, usize)> = self.breaks.iter().map(|b| (b.line, b.stage)).collect();
        ProcessorTopology::new(self.n_cells, self.stages_per_line, &breaks)
    }
}

pub fn parse_topology(text: &str) -> Result<ProcessorTopology> {
    serde_json::from_str::<TopologyJson>(text)
        .map_err(parse_err)?
        .into_topology()
}

pub fn write_stream(bits: &[LineBit]) -> String {
    let mut s = String::from("line_id,cycle,bit\n");
    for b in bits {
        let _ = writeln!(s, "{},{},{}", b.line_id, b.cycle, u8::from(b.bit));
    }
    s
}

/// Readout chain settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReadoutConfig {
    pub band_center_hz: f64,
    pub band_width_hz: f64,
    pub lo_offset_hz: f64,
    pub tn_k: f64,
    pub pg_dbm: f64,
    pub integration_s: f64,
    pub snr_min: f64,
    pub a_max: f64,
}

impl Default for ReadoutConfig {
    fn default() -> Self {
        Self {
            band_center_hz: 6e9,
            band_width_hz: 2.5e9,
            lo_offset_hz: 0.0,
            tn_k: 7.9,
            pg_dbm: -96.0,
            integration_s: 1.0 / 19.5e6,
            snr_min: 5.0,
            a_max: 0.25,
        }
    }
}

impl ReadoutConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("band_center_hz", self.band_center_hz),
            ("band_width_hz", self.band_width_hz),
            ("tn_k", self.tn_k),
            ("integration_s", self.integration_s),
            ("snr_min", self.snr_min),
            ("a_max", self.a_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.pg_dbm.is_finite() {
            return Err(Error::invalid("pg_dbm must be finite"));
        }
        if !(self.lo_offset_hz.abs() <= crate::readout::MAX_LO_OFFSET_HZ) {
            return Err(Error::invalid(format!("|lo_offset_hz| {} exceeds 750 MHz", self.lo_offset_hz)));
        }
        Ok(())
    }
}

pub fn parse_readout_config(text: &str) -> Result<ReadoutConfig> {
    let cfg: ReadoutConfig = serde_json::from_str(text).map_err(parse_err)?;
    cfg.validate()?;
    Ok(cfg)
}

fn bit_field(b: Option<bool>) -> &'static str {
    match b {
        Some(true) => "1",
        Some(false) => "0",
        None => "",
    }
}

pub fn write_shots(shots: &[ShotRecord]) -> String {
    let mut s = String::from("tone_id,rep,i,q,truth,decided\n");
    for r in shots {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.tone_id,
            r.rep,
            r.iq.re,
            r.iq.im,
            bit_field(r.truth),
            bit_field(r.decided)
        );
    }
    s
}

pub fn write_spectrum(spectrum: &Spectrum) -> String {
    let mut s = String::from("freq_hz,psd\n");
    for (f, d) in spectrum.freqs.iter().zip(&spectrum.density) {
        let _ = writeln!(s, "{f},{d}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::{homogenize_array, CalibrationSettings};
    use proptest::prelude::*;

    const DEVICE: &str = r#"{"cs_f":1.7e-12,"cc_f":7e-14,"lg_h":3.24e-10,"ic_a":1.1e-5,"d_m":5e-8,"qc":338,
        "tls":{"qi_lp":1000,"qi_res":100000,"e_sat_vpm":50}}"#;

    #[test]
    fn device_round_trip() {
        let d = parse_device(DEVICE).unwrap();
        assert_eq!(d.design, ResonatorDesign::baseline());
        assert_eq!(d.tls, TlsLossModel::default());
        assert_eq!(parse_device(&write_device(&d)).unwrap(), d);
        assert!(uniform_junctions(&d.design));
    }

    #[test]
    fn device_rejects_bad_input() {
        assert!(matches!(parse_device("{"), Err(Error::Parse(_))));
        assert!(matches!(parse_device(&DEVICE.replace("338", "-1")), Err(Error::InvalidParameter(_))));
        assert!(matches!(parse_device(&DEVICE.replace("\"qc\"", "\"qq\"")), Err(Error::Parse(_))));
    }

    #[test]
    fn sweep_round_trip_and_errors() {
        let sweep = vec![(6e9, Complex64::new(0.9, -0.1)), (6.001e9, Complex64::new(0.5, 0.25))];
        assert_eq!(parse_sweep(&write_sweep(&sweep)).unwrap(), sweep);
        assert_eq!(parse_sweep("# comment\nfreq_hz,re,im\n1,2,3\n").unwrap().len(), 1);
        assert!(parse_sweep("f,re,im\n1,2,3\n").is_err());
        assert!(parse_sweep("freq_hz,re,im\n1,x,3\n").is_err());
        assert!(parse_sweep("freq_hz,re,im\n1,2\n").is_err());
        assert!(parse_sweep("freq_hz,re,im\n1,NaN,3\n").is_err());
    }

    #[test]
    fn topology_and_readout_configs() {
        let t = parse_topology(r#"{"n_cells":64,"stages_per_line":30,"breaks":[{"line":2,"stage":4}]}"#).unwrap();
        assert_eq!(t.lines[2].breaks, vec![4]);
        assert!(matches!(parse_topology(r#"{"n_cells":63,"stages_per_line":30}"#), Err(Error::NotPerfectSquare(63))));
        assert!(parse_topology(r#"{"n_cells":64,"stages_per_line":30,"breaks":[{"line":99,"stage":0}]}"#).is_err());
        let r = parse_readout_config(r#"{"pg_dbm":-98}"#).unwrap();
        assert_eq!(r.pg_dbm, -98.0);
        assert_eq!(r.tn_k, 7.9);
        assert!(parse_readout_config(r#"{"lo_offset_hz":8e8}"#).is_err());
        assert!(parse_readout_config(r#"{"tn_k":0}"#).is_err());
    }

    #[test]
    fn writers_have_headers_and_rows() {
        let bits = [LineBit { line_id: 1, cycle: 2, bit: true }];
        assert_eq!(write_stream(&bits), "line_id,cycle,bit\n1,2,1\n");
        let shot = ShotRecord { tone_id: 0, rep: 3, iq: Complex64::new(0.5, -0.5), truth: Some(false), decided: None };
        assert_eq!(write_shots(&[shot]), "tone_id,rep,i,q,truth,decided\n0,3,0.5,-0.5,0,\n");
        let d = ResonatorDesign::baseline();
        let f00 = d.zero_flux_frequency();
        let cal = homogenize_array(&[d.clone(), d], &[f00 - 1e8, f00 + 1e8], 1.0, &CalibrationSettings::default()).unwrap();
        let text = write_assignments(&cal);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].ends_with(",ok") || lines[2].ends_with(",ok"));
        assert!(text.contains("target_unreachable"));
    }

    proptest! {
        #[test]
        fn parsers_never_panic(s in "\\PC{0,200}") {
            let _ = parse_device(&s);
            let _ = parse_sweep(&s);
            let _ = parse_topology(&s);
            let _ = parse_readout_config(&s);
        }

        #[test]
        fn sweep_text_round_trip(rows in proptest::collection::vec((1e6f64..1e10, -2.0f64..2.0, -2.0f64..2.0), 0..30)) {
            let sweep: Vec<(f64, Complex64)> = rows.iter().map(|&(f, a, b)| (f, Complex64::new(a, b))).collect();
            prop_assert_eq!(parse_sweep(&write_sweep(&sweep)).unwrap(), sweep);
        }
    }
}
