//! Array scaling table and frequency grid allocation.

use serde::Serialize;

use crate::{Error, Result};

/// Required `Qi / Qc_max` ratio.
pub const MARGIN: f64 = 10.0;
/// Qubits per unit cell of the processor.
pub const QUBITS_PER_CELL: u64 = 8;
pub const DEFAULT_BAND_CENTER_HZ: f64 = 6.0e9;
pub const DEFAULT_BAND_WIDTH_HZ: f64 = 2.5e9;
/// Tone slots per resonator, in linewidths.
pub const LINEWIDTHS_PER_SLOT: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingRow {
    pub n_qubits: u64,
    pub n_cells: u64,
    pub n_res: u64,
    /// Allotted linewidth (Hz).
    pub delta_f_hz: f64,
    pub qc_min: f64,
    pub qc_max: f64,
    pub qi_min: f64,
    pub n_wires: u64,
}

impl ScalingRow {
    /// Values rounded for display: Δf in MHz
    /// to 0.1, Qc to the nearest 10, Qi to the nearest 100.
    pub fn display(&self) -> DisplayRow {
        DisplayRow {
            n_qubits: self.n_qubits,
            n_cells: self.n_cells,
            n_res: self.n_res,
            delta_f_mhz: (self.delta_f_hz / 1e5).round() / 10.0,
            qc_min: round_to(self.qc_min, 10.0),
            qc_max: round_to(self.qc_max, 10.0),
            qi_min: self.qi_min,
            n_wires: self.n_wires,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DisplayRow {
    pub n_qubits: u64,
    pub n_cells: u64,
    pub n_res: u64,
    pub delta_f_mhz: f64,
    pub qc_min: f64,
    pub qc_max: f64,
    pub qi_min: f64,
    pub n_wires: u64,
}

fn round_to(x: f64, step: f64) -> f64 {
    (x / step).round() * step
}

fn exact_sqrt(n: u64) -> Option<u64> {
    let r = (n as f64).sqrt().round() as u64;
    (r.checked_mul(r) == Some(n)).then_some(r)
}

/// Smallest `k` with `k^3 >= n`.
fn ceil_cbrt(n: u64) -> u64 {
    let mut k = (n as f64).cbrt().floor() as u64;
    while k.saturating_mul(k).saturating_mul(k) < n {
        k += 1;
    }
    while k > 0 && (k - 1) * (k - 1) * (k - 1) >= n {
        k -= 1;
    }
    k
}

pub fn scaling_row(n_cells: u64, band_center_hz: f64, band_width_hz: f64) -> Result<ScalingRow> {
    let side = exact_sqrt(n_cells)
        .filter(|&s| s > 0)
        .ok_or(Error::NotPerfectSquare(n_cells))?;
    if !(band_width_hz > 0.0 && band_center_hz > band_width_hz / 2.0) {
        return Err(Error::invalid(format!(
            "band {band_center_hz} +- {} Hz is not a positive band",
            band_width_hz / 2.0
        )));
    }
    let n_res = 4 * side;
    let delta_f_hz = band_width_hz / (LINEWIDTHS_PER_SLOT * n_res as f64);
    let qc_min = (band_center_hz - band_width_hz / 2.0) / delta_f_hz;
    let qc_max = (band_center_hz + band_width_hz / 2.0) / delta_f_hz;
    Ok(ScalingRow {
        n_qubits: QUBITS_PER_CELL * n_cells,
        n_cells,
        n_res,
        delta_f_hz,
        qc_min,
        qc_max,
        qi_min: round_to(MARGIN * qc_max, 100.0),
        n_wires: ceil_cbrt(2 * n_res),
    })
}

/// Cell counts of the reference scaling table.
pub const TABLE_CELLS: [u64; 5] = [64, 144, 256, 400, 576];

pub fn scaling_table(band_center_hz: f64, band_width_hz: f64) -> Result<Vec<ScalingRow>> {
    TABLE_CELLS
        .iter()
        .map(|&n| scaling_row(n, band_center_hz, band_width_hz))
        .collect()
}

/// Slot centres for `n_res` tones dividing the band into equal slots.
pub fn frequency_grid(n_res: usize, band_center_hz: f64, band_width_hz: f64) -> Result<Vec<f64>> {
    if n_res == 0 {
        return Err(Error::invalid("frequency grid needs at least one slot"));
    }
    if !(band_width_hz > 0.0 && band_center_hz.is_finite()) {
        return Err(Error::invalid(format!("invalid band width {band_width_hz}")));
    }
    let pitch = band_width_hz / n_res as f64;
    let first = band_center_hz - band_width_hz / 2.0 + pitch / 2.0;
    Ok((0..n_res).map(|i| first + pitch * i as f64).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct WireCount {
    pub per_device: u64,
    pub dac_addressed: u64,
}

pub fn wire_comparison(n_res: u64) -> Result<WireCount> {
    if n_res == 0 {
        return Err(Error::invalid("wire comparison needs n_res >= 1"));
    }
    Ok(WireCount {
        per_device: 2 * n_res,
        dac_addressed: ceil_cbrt(2 * n_res),
    })
}
