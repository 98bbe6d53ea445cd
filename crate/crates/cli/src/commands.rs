//! One function per subcommand. Each returns the files it wrote.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use fastr::calibration::{
    collision_yield, homogenize_array, sample_surface, scattered_array, DEFAULT_COLLISION_SPACING,
};
use fastr::io::{failure_status, write_assignments, write_shots, write_spectrum, write_stream, write_surface};
use fastr::metrology::{fit_noise, psd, simulate_noise_run, white_floor, NoiseRun, OneOverF, TransitionCurve};
use fastr::planner::{frequency_grid, scaling_row, wire_comparison};
use fastr::readout::{end_to_end_fidelity, operable_region, FidelityConfig};
use fastr::shift_register::{plan_readout, stream_lines, throughput, Direction};
use fastr::squid::{draw_thickness_scatter, perturb_design, Prototype, ResonanceProfile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{Placement, Resolved};
use crate::output::{write_atomic, Format, Meta};

/// Filter bandwidth of the shift-register clock used by `shift-demo` (Hz).
pub const SHIFT_CLOCK_HZ: f64 = 30e6;

pub struct Run<'a> {
    pub config: &'a Resolved,
    pub out_dir: &'a Path,
    pub format: Format,
}

impl Run<'_> {
    fn meta(&self, command: &'static str) -> Meta {
        Meta::new(command, self.config.hash())
    }

    fn write(&self, name: &str, contents: &str) -> anyhow::Result<PathBuf> {
        write_atomic(self.out_dir, name, contents).with_context(|| format!("writing {name}"))
    }

    /// Write a table as CSV (via `csv_body`) or as JSON (via `data`).
    fn write_table<T: Serialize>(
        &self,
        meta: &Meta,
        stem: &str,
        csv_body: impl FnOnce() -> String,
        data: &T,
    ) -> anyhow::Result<PathBuf> {
        let name = format!("{stem}.{}", self.format.ext());
        let text = match self.format {
            Format::Csv => meta.csv(&csv_body()),
            Format::Json => meta.json(data)?,
        };
        self.write(&name, &text)
    }
}

pub fn surface(run: &Run) -> anyhow::Result<Vec<PathBuf>> {
    let spec = run.config.scenario.surface;
    let device = run.config.device();
    let surface = sample_surface(&device.design, spec.n_per_axis, spec.flux_max)?;
    let meta = run.meta("surface");
    let path = run.write_table(&meta, "surface", || write_surface(&surface), &surface)?;
    Ok(vec![path])
}

#[derive(Serialize)]
struct FailureRow {
    device_id: usize,
    slot_hz: f64,
    status: &'static str,
    reason: String,
}

pub fn calibrate(run: &Run) -> anyhow::Result<Vec<PathBuf>> {
    let sc = &run.config.scenario;
    let settings = sc.calibration;
    let template = run.config.device().design;
    let slots = match &sc.array.slots_hz {
        Some(s) => s.clone(),
        None => frequency_grid(
            sc.array.n_devices,
            sc.readout.band_center_hz + sc.readout.lo_offset_hz,
            sc.readout.band_width_hz,
        )?,
    };
    let designs = match sc.array.placement {
        Placement::PerSlot => scattered_array(
            &template,
            &slots,
            sc.array.margin_linewidths,
            sc.array.scatter,
            settings.qi_operating,
            sc.seed,
        )?,
        Placement::Template => draw_thickness_scatter(slots.len(), sc.array.scatter, sc.seed)
            .into_iter()
            .map(|dd| perturb_design(&template, dd).map(|p| p.design))
            .collect::<fastr::Result<Vec<_>>>()?,
    };
    let cal = homogenize_array(&designs, &slots, sc.array.r_target, &settings)?;
    let freqs: Vec<f64> = cal.assignments.iter().map(|a| a.f0_hz).collect();
    let linewidth = cal.assignments.iter().map(|a| a.linewidth_hz).fold(0.0, f64::max);
    let collisions = if freqs.is_empty() {
        None
    } else {
        Some(collision_yield(&freqs, DEFAULT_COLLISION_SPACING, linewidth)?)
    };
    let failures: Vec<FailureRow> = cal
        .failures
        .iter()
        .map(|f| FailureRow {
            device_id: f.device_id,
            slot_hz: f.slot_hz,
            status: failure_status(&f.reason),
            reason: f.reason.to_string(),
        })
        .collect();

    #[derive(Serialize)]
    struct Assignments<'a> {
        assignments: &'a [fastr::calibration::BiasAssignment],
        failures: &'a [FailureRow],
    }
    #[derive(Serialize)]
    struct Summary<'a> {
        summary: fastr::calibration::ArraySummary,
        r_target: f64,
        settings: fastr::calibration::CalibrationSettings,
        collision: Option<fastr::calibration::CollisionReport>,
        failures: &'a [FailureRow],
    }

    let meta = run.meta("calibrate");
    let table = run.write_table(
        &meta,
        "assignments",
        || write_assignments(&cal),
        &Assignments {
            assignments: &cal.assignments,
            failures: &failures,
        },
    )?;
    let summary = run.write(
        "calibration_summary.json",
        &meta.json(&Summary {
            summary: cal.summary,
            r_target: sc.array.r_target,
            settings,
            collision: collisions,
            failures: &failures,
        })?,
    )?;
    Ok(vec![table, summary])
}

pub fn fidelity(run: &Run) -> anyhow::Result<Vec<PathBuf>> {
    let sc = &run.config.scenario;
    let spec = sc.fidelity;
    let rd = sc.readout;
    let (profile, region) = match run.config.device {
        None => {
            let proto = Prototype::new();
            let region = operable_region(&proto, rd.snr_min, rd.a_max, rd.tn_k, 1.0 / rd.integration_s)?;
            (proto.profile, Some(region))
        }
        Some(_) => {
            let d = run.config.device().design;
            let p = ResonanceProfile::from_quality(d.zero_flux_frequency(), sc.calibration.qi_operating, d.qc)?;
            (p, None)
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    let pattern: Vec<bool> = (0..spec.pattern_bits).map(|_| rng.random()).collect();
    let cfg = FidelityConfig {
        profile,
        tone_hz: profile.f0,
        tn_k: rd.tn_k,
        integration_s: rd.integration_s,
        pg_dbm: rd.pg_dbm,
        forced_snr: spec.forced_snr,
        pattern,
        n_repeats: spec.n_repeats,
        calibration_shots: spec.calibration_shots,
        dump_limit: spec.dump_limit,
        seed: sc.seed,
    };
    let report = end_to_end_fidelity(&cfg)?;

    #[derive(Serialize)]
    struct Report<'a> {
        report: &'a fastr::readout::FidelityReport,
        predicted_within_interval: bool,
        profile: ResonanceProfile,
        pattern: &'a [bool],
        operable_region: Option<fastr::readout::OperableRegion>,
    }

    let meta = run.meta("fidelity");
    let rep = run.write(
        "fidelity_report.json",
        &meta.json(&Report {
            report: &report,
            predicted_within_interval: report.predicted_within_interval(),
            profile,
            pattern: &cfg.pattern,
            operable_region: region,
        })?,
    )?;
    let shots = run.write_table(&meta, "shots", || write_shots(&report.shots), &report.shots)?;
    Ok(vec![rep, shots])
}

pub fn psd_cmd(run: &Run) -> anyhow::Result<Vec<PathBuf>> {
    let sc = &run.config.scenario;
    let p = sc.psd;
    let curve = TransitionCurve::new(p.width_phi0, p.center_phi0)?;
    let noise = OneOverF::for_run(p.one_over_f_amplitude, p.alpha, p.n_samples, p.tau_s);
    let series = simulate_noise_run(&NoiseRun {
        curve,
        bias: p.center_phi0,
        noise,
        shots_per_sample: p.shots_per_sample,
        n_samples: p.n_samples,
        tau_s: p.tau_s,
        inversion: p.inversion,
        seed: sc.seed,
    })?;
    let spectrum = psd(&series, p.tau_s)?;
    let fit = fit_noise(&spectrum)?;
    let predicted = white_floor(p.width_phi0, p.tau_s, p.shots_per_sample);

    #[derive(Serialize)]
    struct FitDoc {
        fit: fastr::metrology::NoiseFit,
        predicted_white: f64,
        white_ratio: f64,
        white_sqrt_phi0_per_sqrt_hz: f64,
        noise: OneOverF,
        spec: crate::config::PsdSpec,
    }

    let meta = run.meta("psd");
    let table = run.write_table(&meta, "psd", || write_spectrum(&spectrum), &spectrum)?;
    let fit_path = run.write(
        "noise_fit.json",
        &meta.json(&FitDoc {
            fit,
            predicted_white: predicted,
            white_ratio: fit.white / predicted,
            white_sqrt_phi0_per_sqrt_hz: fit.white.sqrt(),
            noise,
            spec: p,
        })?,
    )?;
    Ok(vec![table, fit_path])
}

/// Render the scaling table as aligned text.
pub fn plan_text(cells: &[u64], center_hz: f64, width_hz: f64) -> anyhow::Result<String> {
    let mut s = String::new();
    writeln!(
        s,
        "{:>8} {:>7} {:>6} {:>9} {:>13} {:>7} {:>6} {:>10}",
        "qubits", "cells", "N_res", "df (MHz)", "Qc", "Qi min", "wires", "wires/dev"
    )?;
    for &n in cells {
        let d = scaling_row(n, center_hz, width_hz)?.display();
        let naive = wire_comparison(d.n_res)?.per_device;
        writeln!(
            s,
            "{:>8} {:>7} {:>6} {:>9.1} {:>13} {:>7} {:>6} {:>10}",
            d.n_qubits,
            d.n_cells,
            d.n_res,
            d.delta_f_mhz,
            format!("{}-{}", d.qc_min, d.qc_max),
            d.qi_min,
            d.n_wires,
            naive
        )?;
    }
    Ok(s)
}

pub fn plan(run: &Run, cells: &[u64]) -> anyhow::Result<(Vec<PathBuf>, String)> {
    let sc = &run.config.scenario;
    let cells = if cells.is_empty() { &sc.plan.n_cells[..] } else { cells };
    let center = sc.readout.band_center_hz;
    let width = sc.readout.band_width_hz;
    let rows = cells
        .iter()
        .map(|&n| scaling_row(n, center, width).map(|r| r.display()))
        .collect::<fastr::Result<Vec<_>>>()?;
    let text = plan_text(cells, center, width)?;
    let meta = run.meta("plan");
    let path = run.write_table(
        &meta,
        "plan",
        || {
            let mut s = String::from("n_qubits,n_cells,n_res,delta_f_mhz,qc_min,qc_max,qi_min,n_wires\n");
            for r in &rows {
                let _ = writeln!(
                    s,
                    "{},{},{},{:.1},{},{},{},{}",
                    r.n_qubits, r.n_cells, r.n_res, r.delta_f_mhz, r.qc_min, r.qc_max, r.qi_min, r.n_wires
                );
            }
            s
        },
        &rows,
    )?;
    Ok((vec![path], text))
}

pub fn shift_demo(run: &Run) -> anyhow::Result<Vec<PathBuf>> {
    let sc = &run.config.scenario;
    let topology = run.config.topology();
    let requested = vec![Direction::Forward; topology.n_lines()];
    let plan = plan_readout(&topology, &requested)?;
    let patterns: Vec<Vec<bool>> = (0..topology.n_lines())
        .map(|id| {
            let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
            rng.set_stream(id as u64);
            let n = topology.reachable_copy_stages(id, plan.directions[id]);
            (0..n).map(|_| rng.random()).collect()
        })
        .collect();
    let bits = stream_lines(&topology, &plan, &patterns)?;

    #[derive(Serialize)]
    struct PlanDoc<'a> {
        plan: &'a fastr::shift_register::ReadoutPlan,
        n_cells: u64,
        stages_per_line: usize,
        bits_per_line: Vec<usize>,
        clock_hz: f64,
        throughput_bps: f64,
    }

    let meta = run.meta("shift-demo");
    let plan_path = run.write(
        "readout_plan.json",
        &meta.json(&PlanDoc {
            plan: &plan,
            n_cells: topology.n_cells,
            stages_per_line: topology.stages_per_line,
            bits_per_line: patterns.iter().map(Vec::len).collect(),
            clock_hz: SHIFT_CLOCK_HZ,
            throughput_bps: throughput(SHIFT_CLOCK_HZ, 3)?,
        })?,
    )?;
    let stream = run.write_table(&meta, "stream", || write_stream(&bits), &bits)?;
    Ok(vec![plan_path, stream])
}
