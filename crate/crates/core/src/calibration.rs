//! Bias selection on the two-SQUID frequency surface.
//!
//! Selecting a bias is a two-step search: first a contour of constant
//! resonance frequency, then a walk along that contour until the SENSE
//! responsivity reaches its target. Contours are traced with rays from the
//! zero-flux origin. The frequency falls monotonically along every ray in
//! the first quadrant, so each ray crosses a given level at most once and
//! bisection pins the crossing to machine precision.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

use crate::fit::bisect;
use crate::squid::{
    draw_thickness_scatter, perturb_design, resonance_frequency, BiasPoint, ResonatorDesign,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSettings {
    /// Intrinsic Q used to convert frequency shifts to linewidths.
    pub qi_operating: f64,
    /// Sense-flux step induced by the coupled QFP (Phi0).
    pub signal_flux: f64,
    /// Allowed frequency residual as a fraction of a linewidth.
    pub freq_tol_linewidths: f64,
    /// Allowed responsivity residual as a fraction of the target.
    pub resp_tol_fraction: f64,
    /// Largest flux applied to either loop (Phi0).
    pub flux_limit: f64,
    /// Largest flux distance between consecutive contour points (Phi0).
    pub max_contour_step: f64,
    pub initial_rays: usize,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self {
            qi_operating: 6000.0,
            signal_flux: 0.015,
            freq_tol_linewidths: 0.01,
            resp_tol_fraction: 0.05,
            flux_limit: 0.49,
            max_contour_step: 0.01,
            initial_rays: 33,
        }
    }
}

impl CalibrationSettings {
    pub fn loaded_q(&self, design: &ResonatorDesign) -> f64 {
        1.0 / (1.0 / self.qi_operating + 1.0 / design.qc)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.qi_operating > 0.0
            && self.signal_flux > 0.0
            && self.freq_tol_linewidths > 0.0
            && self.resp_tol_fraction > 0.0
            && self.flux_limit > 0.0
            && self.flux_limit < 0.5
            && self.max_contour_step > 0.0
            && self.initial_rays >= 2)
        {
            return Err(Error::invalid(format!("invalid calibration settings {self:?}")));
        }
        Ok(())
    }
}

/// Resonance frequency sampled on a square flux grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrequencySurface {
    /// Flux samples shared by both axes (Phi0).
    pub axis: Vec<f64>,
    /// Row-major: `grid[i * n + j]` is at `(axis[i], axis[j])` =
    /// `(phi_tune, phi_sense)`. NaN where a SQUID is frustrated.
    pub grid: Vec<f64>,
}

impl FrequencySurface {
    pub fn n(&self) -> usize {
        self.axis.len()
    }

    pub fn at(&self, i_tune: usize, j_sense: usize) -> f64 {
        self.grid[i_tune * self.n() + j_sense]
    }

    /// `(phi_tune, phi_sense, f0)` triples in row-major order.
    pub fn triples(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        let n = self.n();
        (0..n * n).map(move |k| (self.axis[k / n], self.axis[k % n], self.grid[k]))
    }
}

pub fn sample_surface(
    design: &ResonatorDesign,
    n_per_axis: usize,
    flux_max: f64,
) -> Result<FrequencySurface> {
    if n_per_axis < 16 {
        return Err(Error::invalid(format!("need at least 16 samples per axis, got {n_per_axis}")));
    }
    if !(flux_max > 0.0 && flux_max <= 0.5) {
        return Err(Error::invalid(format!("flux range must be in (0, 0.5], got {flux_max}")));
    }
    let axis: Vec<f64> = (0..n_per_axis)
        .map(|i| flux_max * i as f64 / (n_per_axis - 1) as f64)
        .collect();
    let mut grid = Vec::with_capacity(n_per_axis * n_per_axis);
    for &t in &axis {
        for &s in &axis {
            let f = resonance_frequency(design, BiasPoint { phi_tune: t, phi_sense: s });
            grid.push(f.unwrap_or(f64::NAN));
        }
    }
    Ok(FrequencySurface { axis, grid })
}

/// Ordered set of biases with a common resonance frequency, running from
/// the `phi_tune` axis side towards the `phi_sense` axis side.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Contour {
    pub points: Vec<BiasPoint>,
    /// Ray angle of each point, measured from the `phi_tune` axis.
    pub angles: Vec<f64>,
    pub f_target: f64,
    pub tolerance_hz: f64,
    /// Largest `|f(point) - f_target|` over the points.
    pub max_deviation: f64,
}

fn ray_point(angle: f64, r: f64) -> BiasPoint {
    BiasPoint {
        phi_tune: r * angle.cos(),
        phi_sense: r * angle.sin(),
    }
}

fn ray_reach(angle: f64, flux_limit: f64) -> f64 {
    flux_limit / angle.cos().max(angle.sin())
}

/// Crossing of the `f_target` level along the ray at `angle`.
fn solve_ray(
    design: &ResonatorDesign,
    angle: f64,
    f_target: f64,
    flux_limit: f64,
) -> Option<BiasPoint> {
    let r_max = ray_reach(angle, flux_limit);
    let f = |r: f64| resonance_frequency(design, ray_point(angle, r)).ok();
    if f(r_max)? > f_target {
        return None;
    }
    let r = bisect(|r| f(r).unwrap_or(0.0) - f_target, 0.0, r_max, 1e-16);
    Some(ray_point(angle, r))
}

fn distance(a: &BiasPoint, b: &BiasPoint) -> f64 {
    (a.phi_tune - b.phi_tune).hypot(a.phi_sense - b.phi_sense)
}

pub fn extract_contour(
    design: &ResonatorDesign,
    f_target: f64,
    tolerance_hz: f64,
    settings: &CalibrationSettings,
) -> Result<Contour> {
    settings.validate()?;
    if !(tolerance_hz > 0.0) {
        return Err(Error::invalid(format!("tolerance must be positive, got {tolerance_hz}")));
    }
    let limit = settings.flux_limit;
    let f_max = design.zero_flux_frequency();
    let f_min = resonance_frequency(design, BiasPoint { phi_tune: limit, phi_sense: limit })?;
    let unreachable = Error::TargetUnreachable {
        f_target_hz: f_target,
        f_min_hz: f_min,
        f_max_hz: f_max,
    };
    if !f_target.is_finite() || f_target > f_max + tolerance_hz || f_target < f_min - tolerance_hz {
        return Err(unreachable);
    }
    if (f_target - f_max).abs() <= tolerance_hz {
        return Ok(Contour {
            points: vec![BiasPoint::ZERO],
            angles: vec![0.0],
            f_target,
            tolerance_hz,
            max_deviation: (f_max - f_target).abs(),
        });
    }
    let f_target_in = f_target.max(f_min);

    // Angular range whose rays reach the level inside the flux box.
    let edge_f = |angle: f64| {
        resonance_frequency(design, ray_point(angle, ray_reach(angle, limit))).unwrap_or(0.0)
    };
    let diag = FRAC_PI_2 / 2.0;
    let lo = if edge_f(0.0) <= f_target_in {
        0.0
    } else {
        bisect(|a| f_target_in - edge_f(a), 0.0, diag, 1e-15)
    };
    let hi = if edge_f(FRAC_PI_2) <= f_target_in {
        FRAC_PI_2
    } else {
        bisect(|a| edge_f(a) - f_target_in, diag, FRAC_PI_2, 1e-15)
    };

    let n0 = settings.initial_rays;
    let mut rays: Vec<(f64, BiasPoint)> = (0..n0)
        .filter_map(|k| {
            let a = lo + (hi - lo) * k as f64 / (n0 - 1) as f64;
            solve_ray(design, a, f_target_in, limit).map(|p| (a, p))
        })
        .collect();
    // Split any gap wider than the step limit.
    for _ in 0..40 {
        let mut refined = Vec::with_capacity(rays.len() * 2);
        let mut split = false;
        for w in rays.windows(2) {
            refined.push(w[0]);
            if distance(&w[0].1, &w[1].1) > settings.max_contour_step {
                let a = 0.5 * (w[0].0 + w[1].0);
                if let Some(p) = solve_ray(design, a, f_target_in, limit) {
                    refined.push((a, p));
                    split = true;
                }
            }
        }
        if let Some(last) = rays.last() {
            refined.push(*last);
        }
        rays = refined;
        if !split {
            break;
        }
    }

    let mut max_deviation: f64 = 0.0;
    let mut points = Vec::with_capacity(rays.len());
    let mut angles = Vec::with_capacity(rays.len());
    for (a, p) in rays {
        let dev = (resonance_frequency(design, p)? - f_target).abs();
        if dev <= tolerance_hz {
            max_deviation = max_deviation.max(dev);
            points.push(p);
            angles.push(a);
        }
    }
    if points.is_empty() {
        return Err(unreachable);
    }
    Ok(Contour {
        points,
        angles,
        f_target,
        tolerance_hz,
        max_deviation,
    })
}

/// Responsivity in linewidths: the frequency change between sense biases
/// `phi_sense +- signal_flux`, divided by the linewidth at `bias`.
pub fn responsivity(
    design: &ResonatorDesign,
    bias: BiasPoint,
    signal_flux: f64,
    qi: f64,
) -> Result<f64> {
    if !(signal_flux > 0.0) {
        return Err(Error::invalid(format!("signal flux must be positive, got {signal_flux}")));
    }
    let f0 = resonance_frequency(design, bias)?;
    let up = resonance_frequency(design, BiasPoint { phi_sense: bias.phi_sense + signal_flux, ..bias })?;
    let down = resonance_frequency(design, BiasPoint { phi_sense: bias.phi_sense - signal_flux, ..bias })?;
    let qr = 1.0 / (1.0 / qi + 1.0 / design.qc);
    Ok((up - down).abs() / (f0 / qr))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResponsivityProfile {
    /// Responsivity (linewidths) at each contour point.
    pub values: Vec<f64>,
    /// Cumulative flux distance along the contour (Phi0).
    pub arc: Vec<f64>,
}

pub fn responsivity_profile(
    design: &ResonatorDesign,
    contour: &Contour,
    settings: &CalibrationSettings,
) -> Result<ResponsivityProfile> {
    let mut values = Vec::with_capacity(contour.points.len());
    let mut arc = Vec::with_capacity(contour.points.len());
    let mut s = 0.0;
    for (k, p) in contour.points.iter().enumerate() {
        if k > 0 {
            s += distance(&contour.points[k - 1], p);
        }
        arc.push(s);
        values.push(responsivity(design, *p, settings.signal_flux, settings.qi_operating)?);
    }
    Ok(ResponsivityProfile { values, arc })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BiasAssignment {
    pub device_id: usize,
    pub slot_hz: f64,
    pub bias: BiasPoint,
    pub f0_hz: f64,
    pub linewidth_hz: f64,
    /// Achieved responsivity (linewidths).
    pub responsivity: f64,
    /// `f0 - slot` (Hz).
    pub f_residual_hz: f64,
    /// `responsivity - r_target` (linewidths).
    pub r_residual: f64,
}

/// Bias on the `f_target` contour whose responsivity is closest to
/// `r_target`. Ties resolve to the smallest sense flux.
pub fn select_bias(
    design: &ResonatorDesign,
    f_target: f64,
    r_target: f64,
    settings: &CalibrationSettings,
) -> Result<BiasAssignment> {
    if !(r_target >= 0.0 && r_target.is_finite()) {
        return Err(Error::invalid(format!("responsivity target must be >= 0, got {r_target}")));
    }
    let qr = settings.loaded_q(design);
    let f_tol = settings.freq_tol_linewidths * f_target / qr;
    let r_tol = (settings.resp_tol_fraction * r_target).max(1e-9);
    let contour = extract_contour(design, f_target, f_tol, settings)?;
    let prof = responsivity_profile(design, &contour, settings)?;
    let r_at = |angle: f64| -> Option<(BiasPoint, f64)> {
        let p = solve_ray(design, angle, f_target, settings.flux_limit)?;
        let r = responsivity(design, p, settings.signal_flux, settings.qi_operating).ok()?;
        Some((p, r))
    };
    let (r_min, r_max) = prof
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| (lo.min(r), hi.max(r)));
    let unreachable = Error::ResponsivityUnreachable {
        r_target,
        r_min,
        r_max,
    };

    let (bias, r) = match prof.values.iter().position(|&r| r >= r_target) {
        Some(0) => {
            if prof.values[0] - r_target > r_tol {
                return Err(unreachable);
            }
            (contour.points[0], prof.values[0])
        }
        Some(k) => {
            let (a0, a1) = (contour.angles[k - 1], contour.angles[k]);
            let angle = bisect(
                |a| r_at(a).map(|(_, r)| r - r_target).unwrap_or(f64::NAN),
                a0,
                a1,
                1e-15,
            );
            match r_at(angle) {
                Some(found) => found,
                None => (contour.points[k], prof.values[k]),
            }
        }
        None => {
            let k = prof
                .values
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(k, _)| k)
                .ok_or(unreachable.clone())?;
            if r_target - prof.values[k] > r_tol {
                return Err(unreachable);
            }
            (contour.points[k], prof.values[k])
        }
    };

    let f0 = resonance_frequency(design, bias)?;
    let assignment = BiasAssignment {
        device_id: 0,
        slot_hz: f_target,
        bias,
        f0_hz: f0,
        linewidth_hz: f0 / qr,
        responsivity: r,
        f_residual_hz: f0 - f_target,
        r_residual: r - r_target,
    };
    if assignment.f_residual_hz.abs() > f_tol || assignment.r_residual.abs() > r_tol {
        return Err(unreachable);
    }
    Ok(assignment)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceFailure {
    pub device_id: usize,
    pub slot_hz: f64,
    pub reason: Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ArraySummary {
    pub n_devices: usize,
    pub n_assigned: usize,
    pub n_failed: usize,
    pub max_f_residual_hz: f64,
    /// Largest frequency residual in units of that device's linewidth.
    pub max_f_residual_linewidths: f64,
    /// Largest `|R - r_target| / r_target`.
    pub max_r_residual_fraction: f64,
    /// `max(R) - min(R)` over assigned devices (linewidths).
    pub responsivity_spread: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayCalibration {
    /// Successful assignments, ordered by device id.
    pub assignments: Vec<BiasAssignment>,
    /// Devices that could not be tuned onto their slot, ordered by id.
    pub failures: Vec<DeviceFailure>,
    pub summary: ArraySummary,
}

/// Tune every device onto a grid slot with common responsivity.
///
/// Devices sorted by zero-flux frequency are matched to slots sorted by
/// frequency. Devices that cannot reach their slot are reported in
/// `failures`.
pub fn homogenize_array(
    designs: &[ResonatorDesign],
    slots: &[f64],
    r_target: f64,
    settings: &CalibrationSettings,
) -> Result<ArrayCalibration> {
    if designs.len() != slots.len() {
        return Err(Error::invalid(format!(
            "{} devices but {} slots",
            designs.len(),
            slots.len()
        )));
    }
    settings.validate()?;
    let mut order: Vec<(usize, f64)> = designs
        .iter()
        .enumerate()
        .map(|(i, d)| (i, d.zero_flux_frequency()))
        .collect();
    order.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let mut sorted_slots = slots.to_vec();
    sorted_slots.sort_by(f64::total_cmp);

    let outcomes: Vec<std::result::Result<BiasAssignment, DeviceFailure>> = order
        .par_iter()
        .zip(sorted_slots.par_iter())
        .map(|(&(id, _), &slot)| {
            select_bias(&designs[id], slot, r_target, settings)
                .map(|a| BiasAssignment {
                    device_id: id,
                    ..a
                })
                .map_err(|reason| DeviceFailure {
                    device_id: id,
                    slot_hz: slot,
                    reason,
                })
        })
        .collect();

    let mut assignments = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(a) => assignments.push(a),
            Err(f) => failures.push(f),
        }
    }
    assignments.sort_by_key(|a| a.device_id);
    failures.sort_by_key(|f| f.device_id);

    let fold_max = |it: &mut dyn Iterator<Item = f64>| it.fold(0.0f64, f64::max);
    let r_min = assignments.iter().map(|a| a.responsivity).fold(f64::INFINITY, f64::min);
    let r_max = assignments.iter().map(|a| a.responsivity).fold(f64::NEG_INFINITY, f64::max);
    let summary = ArraySummary {
        n_devices: designs.len(),
        n_assigned: assignments.len(),
        n_failed: failures.len(),
        max_f_residual_hz: fold_max(&mut assignments.iter().map(|a| a.f_residual_hz.abs())),
        max_f_residual_linewidths: fold_max(
            &mut assignments.iter().map(|a| a.f_residual_hz.abs() / a.linewidth_hz),
        ),
        max_r_residual_fraction: fold_max(&mut assignments.iter().map(|a| {
            if r_target > 0.0 {
                a.r_residual.abs() / r_target
            } else {
                a.r_residual.abs()
            }
        })),
        responsivity_spread: if assignments.is_empty() { 0.0 } else { r_max - r_min },
    };
    Ok(ArrayCalibration {
        assignments,
        failures,
        summary,
    })
}

/// Devices spaced closer than a collision threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollisionReport {
    pub yield_fraction: f64,
    /// Indices (into the input) of devices in at least one collision.
    pub colliding: Vec<usize>,
    /// Colliding index pairs `(i, j)` with `i < j`, sorted.
    pub pairs: Vec<(usize, usize)>,
}

/// Fraction of devices not within `min_spacing_linewidths * linewidth` of
/// any other device.
pub fn collision_yield(
    frequencies: &[f64],
    min_spacing_linewidths: f64,
    linewidth: f64,
) -> Result<CollisionReport> {
    if frequencies.is_empty() {
        return Err(Error::invalid("collision_yield needs at least one frequency"));
    }
    let threshold = min_spacing_linewidths * linewidth;
    let mut idx: Vec<usize> = (0..frequencies.len()).collect();
    idx.sort_by(|&a, &b| frequencies[a].total_cmp(&frequencies[b]).then(a.cmp(&b)));
    let mut pairs = Vec::new();
    for (k, &i) in idx.iter().enumerate() {
        for &j in &idx[k + 1..] {
            if frequencies[j] - frequencies[i] >= threshold {
                break;
            }
            pairs.push((i.min(j), i.max(j)));
        }
    }
    pairs.sort_unstable();
    let mut hit = vec![false; frequencies.len()];
    for &(i, j) in &pairs {
        hit[i] = true;
        hit[j] = true;
    }
    let colliding: Vec<usize> = (0..frequencies.len()).filter(|&i| hit[i]).collect();
    Ok(CollisionReport {
        yield_fraction: 1.0 - colliding.len() as f64 / frequencies.len() as f64,
        colliding,
        pairs,
    })
}

/// Default collision threshold (linewidths).
pub const DEFAULT_COLLISION_SPACING: f64 = 2.0;

/// An array of devices built for a slot grid, with fabrication scatter.
///
/// Device `i` is designed so that even at the thinnest dielectric the
/// scatter allows, its zero-flux frequency sits `margin_linewidths` above
/// slot `i`; its actual dielectric error is then drawn uniformly from
/// `[-scatter_frac, scatter_frac]`.
pub fn scattered_array(
    template: &ResonatorDesign,
    slots: &[f64],
    margin_linewidths: f64,
    scatter_frac: f64,
    qi_operating: f64,
    seed: u64,
) -> Result<Vec<ResonatorDesign>> {
    if !(0.0..1.0).contains(&scatter_frac) {
        return Err(Error::invalid(format!("scatter fraction must be in [0, 1), got {scatter_frac}")));
    }
    let qr = 1.0 / (1.0 / qi_operating + 1.0 / template.qc);
    let headroom = 1.0 - margin_linewidths / qr;
    if !(headroom > 0.0) {
        return Err(Error::invalid("margin exceeds the resonator Q"));
    }
    let worst = (1.0 - scatter_frac).sqrt();
    let deltas = draw_thickness_scatter(slots.len(), scatter_frac, seed);
    slots
        .iter()
        .zip(deltas)
        .map(|(&slot, delta)| {
            let nominal = template.with_zero_flux_frequency(slot / (headroom * worst))?;
            Ok(perturb_design(&nominal, delta)?.design)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::squid::Prototype;
    use proptest::prelude::*;

    fn settings() -> CalibrationSettings {
        CalibrationSettings::default()
    }

    #[test]
    fn surface_corner_and_monotonicity() {
        let d = ResonatorDesign::baseline();
        let s = sample_surface(&d, 32, 0.5).unwrap();
        assert_eq!(s.at(0, 0), d.zero_flux_frequency());
        let n = s.n();
        assert!(s.at(n - 1, 0).is_nan() && s.at(0, n - 1).is_nan());
        for i in 0..n - 2 {
            for j in 0..n - 2 {
                assert!(s.at(i + 1, j) <= s.at(i, j));
                assert!(s.at(i, j + 1) <= s.at(i, j));
            }
        }
        assert_eq!(s.triples().count(), n * n);
        assert!(sample_surface(&d, 8, 0.5).is_err());
    }

    #[test]
    fn surface_tuning_range() {
        let d = ResonatorDesign::baseline();
        let lo = resonance_frequency(&d, BiasPoint { phi_tune: 0.45, phi_sense: 0.45 }).unwrap();
        assert!(d.zero_flux_frequency() - lo >= 400e6);
        let s = sample_surface(&d, 19, 0.45).unwrap();
        assert!(s.at(0, 0) - s.at(18, 18) >= 400e6);
    }

    #[test]
    fn contour_on_prototype() {
        let proto = Prototype::new();
        let d = &proto.device.design;
        let target = d.zero_flux_frequency() - 80e6;
        let c = extract_contour(d, target, 1e3, &settings()).unwrap();
        assert!(c.points.len() > 10);
        for p in &c.points {
            assert!((resonance_frequency(d, *p).unwrap() - target).abs() <= 1e3);
        }
        for w in c.points.windows(2) {
            assert!(distance(&w[0], &w[1]) <= settings().max_contour_step);
        }
        assert_eq!(c.points[0].phi_sense, 0.0);
        assert!(c.points.last().unwrap().phi_tune.abs() < 1e-12);
    }

    #[test]
    fn contour_errors_and_degenerate_case() {
        let d = ResonatorDesign::baseline();
        let f00 = d.zero_flux_frequency();
        assert!(matches!(
            extract_contour(&d, f00 + 1e6, 1e3, &settings()),
            Err(Error::TargetUnreachable { .. })
        ));
        assert!(matches!(
            extract_contour(&d, 1e9, 1e3, &settings()),
            Err(Error::TargetUnreachable { .. })
        ));
        let c = extract_contour(&d, f00, 1e3, &settings()).unwrap();
        assert_eq!(c.points, vec![BiasPoint::ZERO]);
    }

    #[test]
    fn deep_contour_is_clipped_to_flux_box() {
        let d = ResonatorDesign::baseline();
        let s = settings();
        let deep = resonance_frequency(&d, BiasPoint { phi_tune: 0.49, phi_sense: 0.2 }).unwrap();
        let c = extract_contour(&d, deep, 1e3, &s).unwrap();
        assert!(c.points[0].phi_sense > 0.0);
        for p in &c.points {
            assert!(p.phi_tune <= s.flux_limit + 1e-12 && p.phi_sense <= s.flux_limit + 1e-12);
        }
    }

    #[test]
    fn responsivity_examples() {
        let d = ResonatorDesign::baseline();
        let r0 = responsivity(&d, BiasPoint { phi_tune: 0.3, phi_sense: 0.0 }, 0.015, 6000.0).unwrap();
        assert!(r0 < 1e-9);
        let b = BiasPoint { phi_tune: 0.1, phi_sense: 0.25 };
        let r1 = responsivity(&d, b, 1e-4, 6000.0).unwrap();
        let r2 = responsivity(&d, b, 2e-4, 6000.0).unwrap();
        assert!((r2 / r1 - 2.0).abs() < 1e-3);
        assert!(responsivity(&d, b, 0.0, 6000.0).is_err());
        assert!(responsivity(&d, BiasPoint { phi_tune: 0.0, phi_sense: 0.485 }, 0.015, 6000.0).is_err());
    }

    #[test]
    fn responsivity_rises_from_tune_axis() {
        let d = ResonatorDesign::baseline();
        let s = settings();
        let target = d.zero_flux_frequency() * (1.0 - 4.0 / s.loaded_q(&d));
        let c = extract_contour(&d, target, 1e3, &s).unwrap();
        let prof = responsivity_profile(&d, &c, &s).unwrap();
        let n = prof.values.len();
        for w in prof.values[..n / 2].windows(2) {
            assert!(w[1] > w[0]);
        }
        assert!(prof.arc.windows(2).all(|w| w[1] > w[0]));
    }

    // Dense brute-force scan along the contour: for many tune fluxes,
    // solve the sense flux directly and evaluate R.
    fn dense_scan(d: &ResonatorDesign, f_target: f64, s: &CalibrationSettings) -> Vec<(BiasPoint, f64)> {
        let mut out = Vec::new();
        for k in 0..=4000 {
            let t = s.flux_limit * k as f64 / 4000.0;
            if let Some(ps) = crate::squid::solve_sense_flux(d, t, f_target, s.flux_limit) {
                let b = BiasPoint { phi_tune: t, phi_sense: ps };
                if let Ok(r) = responsivity(d, b, s.signal_flux, s.qi_operating) {
                    out.push((b, r));
                }
            }
        }
        out
    }

    #[test]
    fn select_bias_matches_dense_scan() {
        let d = ResonatorDesign::baseline();
        let s = settings();
        let qr = s.loaded_q(&d);
        let target = d.zero_flux_frequency() * (1.0 - 4.0 / qr);
        let a = select_bias(&d, target, 1.0, &s).unwrap();
        assert!(a.f_residual_hz.abs() <= 0.01 * a.linewidth_hz);
        assert!(a.r_residual.abs() <= 0.05);
        let scan = dense_scan(&d, target, &s);
        let best = scan
            .iter()
            .min_by(|x, y| (x.1 - 1.0).abs().total_cmp(&(y.1 - 1.0).abs()))
            .unwrap();
        assert!((best.1 - 1.0).abs() < 0.01);
        assert!(distance(&best.0, &a.bias) < 2e-3, "{:?} vs {:?}", best.0, a.bias);
    }

    #[test]
    fn select_bias_edge_cases() {
        let d = ResonatorDesign::baseline();
        let s = settings();
        let target = d.zero_flux_frequency() * (1.0 - 4.0 / s.loaded_q(&d));
        let zero = select_bias(&d, target, 0.0, &s).unwrap();
        assert_eq!(zero.bias.phi_sense, 0.0);
        assert!(matches!(
            select_bias(&d, target, 50.0, &s),
            Err(Error::ResponsivityUnreachable { .. })
        ));
        assert!(matches!(
            select_bias(&d, d.zero_flux_frequency() + 1e8, 1.0, &s),
            Err(Error::TargetUnreachable { .. })
        ));
    }

    #[test]
    fn identical_devices_get_identical_bias() {
        let d = ResonatorDesign::baseline();
        let s = settings();
        let designs = vec![d.clone(); 4];
        let slot = d.zero_flux_frequency() - 100e6;
        let cal = homogenize_array(&designs, &[slot; 4], 1.0, &s).unwrap();
        assert_eq!(cal.summary.n_assigned, 4);
        for a in &cal.assignments {
            assert_eq!(a.bias, cal.assignments[0].bias);
        }
    }

    #[test]
    fn unreachable_slot_is_reported_not_dropped() {
        let d = ResonatorDesign::baseline();
        let s = settings();
        let f00 = d.zero_flux_frequency();
        let slots = [f00 - 150e6, f00 - 100e6, f00 + 50e6];
        let cal = homogenize_array(&vec![d; 3], &slots, 1.0, &s).unwrap();
        assert_eq!(cal.summary.n_assigned, 2);
        assert_eq!(cal.failures.len(), 1);
        assert!(matches!(cal.failures[0].reason, Error::TargetUnreachable { .. }));
        assert!(homogenize_array(&[ResonatorDesign::baseline()], &[1.0, 2.0], 1.0, &s).is_err());
    }

    #[test]
    fn scattered_array_homogenizes() {
        let template = ResonatorDesign::baseline();
        let s = settings();
        let slots = crate::planner::frequency_grid(8, 6e9, 0.625e9).unwrap();
        let designs = scattered_array(&template, &slots, 6.0, 0.1, s.qi_operating, 11).unwrap();
        let cal = homogenize_array(&designs, &slots, 1.0, &s).unwrap();
        assert_eq!(cal.summary.n_failed, 0, "{:?}", cal.failures);
        for a in &cal.assignments {
            assert!(a.f0_hz <= designs[a.device_id].zero_flux_frequency());
        }
        assert!(cal.summary.max_f_residual_linewidths < 0.01);
        assert!(cal.summary.max_r_residual_fraction < 0.05);
    }

    #[test]
    fn collision_examples() {
        let lw = 20e6;
        let grid: Vec<f64> = (0..32).map(|i| 5e9 + 4.0 * lw * i as f64).collect();
        assert_eq!(collision_yield(&grid, 2.0, lw).unwrap().yield_fraction, 1.0);
        let mut dup = grid.clone();
        dup[7] = dup[3];
        let r = collision_yield(&dup, 2.0, lw).unwrap();
        assert_eq!(r.pairs, vec![(3, 7)]);
        assert!((r.yield_fraction - 30.0 / 32.0).abs() < 1e-15);
        assert!(collision_yield(&[], 2.0, lw).is_err());
        assert_eq!(collision_yield(&[1.0], 2.0, lw).unwrap().yield_fraction, 1.0);
    }

    proptest! {
        #[test]
        fn collision_yield_symmetries(
            freqs in proptest::collection::vec(4.0e9f64..8.0e9, 1..40),
            seed in 0u64..1000,
            scale in 0.1f64..10.0,
        ) {
            let lw = 20e6;
            let base = collision_yield(&freqs, 2.0, lw).unwrap().yield_fraction;
            let mut shuffled = freqs.clone();
            let n = shuffled.len();
            for i in 0..n {
                let j = ((seed as usize).wrapping_mul(31).wrapping_add(i * 17)) % n;
                shuffled.swap(i, j);
            }
            prop_assert_eq!(collision_yield(&shuffled, 2.0, lw).unwrap().yield_fraction, base);
            // Powers of two keep the scaling exact in floating point.
            let k = 2f64.powi(scale.log2().round() as i32);
            let scaled: Vec<f64> = freqs.iter().map(|f| f * k).collect();
            prop_assert_eq!(collision_yield(&scaled, 2.0, lw * k).unwrap().yield_fraction, base);
        }
    }
}
