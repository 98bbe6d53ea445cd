//! Physics of a single frequency- and sensitivity-tunable resonator.
//!
//! The device is a lumped LC resonator whose inductive branch is a fixed
//! geometric inductance in series with two symmetric DC-SQUIDs (TUNE and
//! SENSE). Each SQUID is modelled with zero loop inductance, so its
//! Josephson inductance is `Phi0 / (2*pi * 2*Ic * |cos(pi*phi)|)` with `Ic`
//! the per-junction critical current. The shunt capacitance is `Cs + Cc`.
//!
//! All quantities are SI; fluxes are in units of `Phi0`.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::fit::bisect;
use crate::units::PHI0;
use crate::{Error, Result};

pub use crate::s21_fit::{fit_s21, S21Fit};

/// `|cos(pi*flux)|` at or below this value is treated as frustration.
pub const FRUSTRATION_EPSILON: f64 = 1e-6;

/// Duffing parameter at which the resonance bifurcates (linewidths).
pub const BIFURCATION_A: f64 = 0.77;

/// Feed-line impedance used by the coupling-capacitor convention.
pub const FEEDLINE_IMPEDANCE: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JunctionParams {
    /// Critical current of each of the two junctions (A).
    pub ic_per_junction: f64,
}

impl JunctionParams {
    pub fn new(ic_per_junction: f64) -> Result<Self> {
        if !(ic_per_junction > 0.0 && ic_per_junction.is_finite()) {
            return Err(Error::invalid(format!(
                "junction critical current must be positive, got {ic_per_junction}"
            )));
        }
        Ok(Self { ic_per_junction })
    }

    /// Critical current of the whole SQUID at `flux`.
    pub fn squid_critical_current(&self, flux: f64) -> f64 {
        2.0 * self.ic_per_junction * (PI * flux).cos().abs()
    }
}

/// Josephson inductance of a symmetric DC-SQUID threaded by `flux` (Phi0).
pub fn squid_inductance(junction: &JunctionParams, flux: f64) -> Result<f64> {
    let c = (PI * flux).cos().abs();
    if !(c > FRUSTRATION_EPSILON) {
        return Err(Error::FluxAtFrustration {
            flux,
            epsilon: FRUSTRATION_EPSILON,
        });
    }
    Ok(PHI0 / (2.0 * PI * 2.0 * junction.ic_per_junction * c))
}

/// Flux bias applied to the two SQUID loops, in units of `Phi0`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BiasPoint {
    pub phi_tune: f64,
    pub phi_sense: f64,
}

impl BiasPoint {
    pub const ZERO: BiasPoint = BiasPoint {
        phi_tune: 0.0,
        phi_sense: 0.0,
    };

    pub fn new(phi_tune: f64, phi_sense: f64) -> Result<Self> {
        if !(phi_tune.is_finite() && phi_sense.is_finite()) {
            return Err(Error::invalid("bias fluxes must be finite"));
        }
        Ok(Self {
            phi_tune,
            phi_sense,
        })
    }

    /// Representative of this bias with each axis wrapped into `[-0.5, 0.5)`.
    pub fn canonical(&self) -> Self {
        fn wrap(x: f64) -> f64 {
            x - (x + 0.5).floor()
        }
        Self {
            phi_tune: wrap(self.phi_tune),
            phi_sense: wrap(self.phi_sense),
        }
    }
}

/// Fixed circuit parameters of one device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonatorDesign {
    /// Shunt (parallel-plate) capacitance (F).
    pub cs: f64,
    /// Coupling capacitance (F).
    pub cc: f64,
    /// Geometric inductance (H).
    pub lg: f64,
    pub tune_squid: JunctionParams,
    pub sense_squid: JunctionParams,
    /// Capacitor dielectric thickness (m).
    pub dielectric_thickness: f64,
    /// Coupling quality factor.
    pub qc: f64,
}

impl ResonatorDesign {
    pub fn new(
        cs: f64,
        cc: f64,
        lg: f64,
        ic_per_junction: f64,
        dielectric_thickness: f64,
        qc: f64,
    ) -> Result<Self> {
        let junction = JunctionParams::new(ic_per_junction)?;
        let design = Self {
            cs,
            cc,
            lg,
            tune_squid: junction,
            sense_squid: junction,
            dielectric_thickness,
            qc,
        };
        design.validate()?;
        Ok(design)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("cs", self.cs),
            ("cc", self.cc),
            ("lg", self.lg),
            ("dielectric_thickness", self.dielectric_thickness),
            ("qc", self.qc),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        JunctionParams::new(self.tune_squid.ic_per_junction)?;
        JunctionParams::new(self.sense_squid.ic_per_junction)?;
        Ok(())
    }

    /// The as-designed prototype: `Cs = 1.7 pF`, `Cc = 70 fF`, `Lg = 324 pH`,
    /// `Ic = 11 uA`, 50 nm dielectric, `Qc = 338`.
    pub fn baseline() -> Self {
        Self::new(1.7e-12, 70e-15, 324e-12, 11e-6, 50e-9, 338.0).expect("valid constants")
    }

    pub fn c_total(&self) -> f64 {
        self.cs + self.cc
    }

    /// Series inductance of both SQUIDs at `bias`.
    pub fn junction_inductance(&self, bias: BiasPoint) -> Result<f64> {
        Ok(squid_inductance(&self.tune_squid, bias.phi_tune)?
            + squid_inductance(&self.sense_squid, bias.phi_sense)?)
    }

    pub fn total_inductance(&self, bias: BiasPoint) -> Result<f64> {
        Ok(self.lg + self.junction_inductance(bias)?)
    }

    /// Zero-flux resonance frequency.
    pub fn zero_flux_frequency(&self) -> f64 {
        resonance_frequency(self, BiasPoint::ZERO).expect("zero flux is never frustrated")
    }

    /// Critical current of the weaker of the two SQUIDs at `bias`.
    pub fn effective_critical_current(&self, bias: BiasPoint) -> f64 {
        self.tune_squid
            .squid_critical_current(bias.phi_tune)
            .min(self.sense_squid.squid_critical_current(bias.phi_sense))
    }

    /// Same inductive branch with the capacitor dielectric rescaled so that
    /// the zero-flux frequency equals `f0_hz`. `qc` is kept (a redesign is
    /// assumed to re-target the coupling capacitor).
    pub fn with_zero_flux_frequency(&self, f0_hz: f64) -> Result<Self> {
        if !(f0_hz > 0.0 && f0_hz.is_finite()) {
            return Err(Error::invalid(format!("target frequency must be positive, got {f0_hz}")));
        }
        let ratio = self.zero_flux_frequency() / f0_hz;
        let cap_scale = ratio * ratio;
        let mut d = self.clone();
        d.cs *= cap_scale;
        d.cc *= cap_scale;
        d.dielectric_thickness /= cap_scale;
        Ok(d)
    }

    /// Coupling quality factor implied by `cc` at `f0_hz`:
    /// `Qc = 2 C_total / (omega0 Cc^2 Z0)`.
    pub fn coupling_qc(&self, f0_hz: f64) -> f64 {
        2.0 * self.c_total() / (2.0 * PI * f0_hz * self.cc * self.cc * FEEDLINE_IMPEDANCE)
    }
}

/// `f0 = 1 / (2 pi sqrt(L_total C_total))`.
pub fn resonance_frequency(design: &ResonatorDesign, bias: BiasPoint) -> Result<f64> {
    let l = design.total_inductance(bias)?;
    Ok(1.0 / (2.0 * PI * (l * design.c_total()).sqrt()))
}

/// Sense flux in `[0, flux_limit]` that puts the device at `f_target` for a
/// fixed tune flux, if one exists.
pub fn solve_sense_flux(
    design: &ResonatorDesign,
    phi_tune: f64,
    f_target: f64,
    flux_limit: f64,
) -> Option<f64> {
    let f = |ps: f64| resonance_frequency(design, BiasPoint { phi_tune, phi_sense: ps }).ok();
    let f_lo = f(0.0)?;
    let f_hi = f(flux_limit)?;
    if f_target > f_lo || f_target < f_hi {
        return None;
    }
    Some(bisect(
        |ps| f(ps).unwrap_or(0.0) - f_target,
        0.0,
        flux_limit,
        1e-15,
    ))
}

/// Phenomenological power-dependent intrinsic loss:
/// `1/Qi = (1/Qi_lp - 1/Qi_res) / sqrt(1 + (E/E_sat)^2) + 1/Qi_res`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TlsLossModel {
    pub qi_low_power: f64,
    pub qi_residual: f64,
    /// Saturation field (V/m).
    pub e_sat: f64,
}

impl Default for TlsLossModel {
    fn default() -> Self {
        Self {
            qi_low_power: 1000.0,
            qi_residual: 1e5,
            e_sat: 50.0,
        }
    }
}

impl TlsLossModel {
    pub fn new(qi_low_power: f64, qi_residual: f64, e_sat: f64) -> Result<Self> {
        if !(qi_low_power > 0.0 && qi_low_power < qi_residual && e_sat > 0.0 && e_sat.is_finite()) {
            return Err(Error::invalid(format!(
                "TLS model needs 0 < qi_low_power < qi_residual and e_sat > 0 \
                 (got {qi_low_power}, {qi_residual}, {e_sat})"
            )));
        }
        Ok(Self {
            qi_low_power,
            qi_residual,
            e_sat,
        })
    }

    pub fn qi(&self, e_field: f64) -> f64 {
        tls_qi(self, e_field)
    }
}

pub fn tls_qi(model: &TlsLossModel, e_field: f64) -> f64 {
    let tls = 1.0 / model.qi_low_power - 1.0 / model.qi_residual;
    let ratio = e_field.max(0.0) / model.e_sat;
    1.0 / (tls / (1.0 + ratio * ratio).sqrt() + 1.0 / model.qi_residual)
}

/// Resonance parameters at one operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonanceProfile {
    pub f0: f64,
    pub qr: f64,
    pub qi: f64,
    pub qc: f64,
    /// `f0 / qr` (Hz).
    pub linewidth: f64,
    /// Duffing shift in linewidths.
    pub duffing_a: f64,
}

impl ResonanceProfile {
    /// Build from intrinsic and coupling Q. `qi` may be infinite.
    pub fn from_quality(f0: f64, qi: f64, qc: f64) -> Result<Self> {
        if !(f0 > 0.0 && f0.is_finite() && qc > 0.0 && qc.is_finite() && qi > 0.0) {
            return Err(Error::invalid(format!(
                "profile needs f0 > 0, qi > 0, qc > 0 (got {f0}, {qi}, {qc})"
            )));
        }
        let qr = 1.0 / (1.0 / qi + 1.0 / qc);
        Ok(Self {
            f0,
            qr,
            qi,
            qc,
            linewidth: f0 / qr,
            duffing_a: 0.0,
        })
    }

    /// Build from loaded and coupling Q; requires `qr <= qc`.
    pub fn from_loaded(f0: f64, qr: f64, qc: f64) -> Result<Self> {
        if !(qr > 0.0 && qr <= qc) {
            return Err(Error::invalid(format!("need 0 < qr <= qc (got qr {qr}, qc {qc})")));
        }
        let inv_qi = 1.0 / qr - 1.0 / qc;
        let qi = if inv_qi > 0.0 { 1.0 / inv_qi } else { f64::INFINITY };
        let mut p = Self::from_quality(f0, qi, qc)?;
        // Keep qr exactly as given; from_quality would round-trip it through qi.
        p.qr = qr;
        p.linewidth = f0 / qr;
        Ok(p)
    }

    pub fn with_f0(mut self, f0: f64) -> Self {
        self.f0 = f0;
        self.linewidth = f0 / self.qr;
        self
    }
}

/// Profile of `design` at `bias` with intrinsic quality factor `qi`.
pub fn profile_at(design: &ResonatorDesign, bias: BiasPoint, qi: f64) -> Result<ResonanceProfile> {
    ResonanceProfile::from_quality(resonance_frequency(design, bias)?, qi, design.qc)
}

/// Transmission of a feed line shunted by a parallel RLC resonator:
/// `S21 = 1 - (Qr/Qc) / (1 + 2i Qr x)`, `x = (f - f0)/f0`.
pub fn s21(f: f64, profile: &ResonanceProfile) -> Complex64 {
    let x = (f - profile.f0) / profile.f0;
    Complex64::new(1.0, 0.0) - (profile.qr / profile.qc) / Complex64::new(1.0, 2.0 * profile.qr * x)
}

/// Energy lineshape of a driven resonator, normalised to 1 on resonance.
pub fn energy_lineshape(profile: &ResonanceProfile, detuning_hz: f64) -> f64 {
    let y = 2.0 * profile.qr * detuning_hz / profile.f0;
    1.0 / (1.0 + y * y)
}

/// Scalar relating generator power to stored energy,
/// `U = kappa * Pg * Qr^2 / (Qc * omega0)` on resonance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveCoupling {
    pub kappa: f64,
}

impl Default for DriveCoupling {
    fn default() -> Self {
        Self { kappa: 2.0 }
    }
}

/// Drive power (dBm) and Duffing shift used as the coupling anchor.
pub const ANCHOR_PG_DBM: f64 = -98.0;
pub const ANCHOR_DUFFING_A: f64 = 0.05;

impl DriveCoupling {
    /// Choose `kappa` so that an on-resonance drive of `pg_watts` produces
    /// Duffing shift `a_target` at the given operating point.
    pub fn calibrate(
        design: &ResonatorDesign,
        bias: BiasPoint,
        profile: &ResonanceProfile,
        pg_watts: f64,
        a_target: f64,
    ) -> Result<Self> {
        let unit = DriveCoupling { kappa: 1.0 };
        let drive = internal_drive(design, bias, profile, &unit, pg_watts, 0.0)?;
        let a_unit = duffing_a(design, bias, profile, drive.current)?.a;
        if !(a_unit > 0.0) {
            return Err(Error::invalid("drive produces no Duffing shift; cannot calibrate"));
        }
        Ok(Self {
            kappa: a_target / a_unit,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InternalDrive {
    /// Stored energy (J).
    pub energy: f64,
    /// Peak current through the inductive branch (A).
    pub current: f64,
    /// Peak electric field in the capacitor dielectric (V/m).
    pub e_field: f64,
}

pub fn internal_drive(
    design: &ResonatorDesign,
    bias: BiasPoint,
    profile: &ResonanceProfile,
    coupling: &DriveCoupling,
    pg_watts: f64,
    detuning_hz: f64,
) -> Result<InternalDrive> {
    if !(pg_watts >= 0.0 && pg_watts.is_finite()) {
        return Err(Error::invalid(format!("generator power must be >= 0, got {pg_watts}")));
    }
    let omega0 = 2.0 * PI * profile.f0;
    let energy = coupling.kappa * pg_watts * profile.qr * profile.qr / (profile.qc * omega0)
        * energy_lineshape(profile, detuning_hz);
    let l = design.total_inductance(bias)?;
    let current = (2.0 * energy / l).sqrt();
    let voltage = (2.0 * energy / design.c_total()).sqrt();
    Ok(InternalDrive {
        energy,
        current,
        e_field: voltage / design.dielectric_thickness,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DuffingShift {
    /// Shift in linewidths.
    pub a: f64,
    /// Junction participation ratio `L_J / (L_g + L_J)`.
    pub alpha: f64,
    pub bifurcated: bool,
}

/// `a = (alpha Qr / 4) (I / Ic)^2` with `Ic` the weaker SQUID's critical
/// current at `bias`.
pub fn duffing_a(
    design: &ResonatorDesign,
    bias: BiasPoint,
    profile: &ResonanceProfile,
    current: f64,
) -> Result<DuffingShift> {
    if !(current >= 0.0) {
        return Err(Error::invalid(format!("current must be >= 0, got {current}")));
    }
    let lj = design.junction_inductance(bias)?;
    let alpha = lj / (design.lg + lj);
    let ic = design.effective_critical_current(bias);
    let ratio = current / ic;
    let a = alpha * profile.qr / 4.0 * ratio * ratio;
    Ok(DuffingShift {
        a,
        alpha,
        bifurcated: a >= BIFURCATION_A,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedDesign {
    pub design: ResonatorDesign,
    /// First-order prediction `delta_f / f = delta_d / 2d`.
    pub predicted_fractional_shift: f64,
}

/// Apply a relative dielectric-thickness error `delta_d_over_d`.
///
/// Both capacitors share the dielectric, so each scales by `1/(1+dd/d)`;
/// `qc` follows the coupling convention and scales by `sqrt(1+dd/d)`.
pub fn perturb_design(design: &ResonatorDesign, delta_d_over_d: f64) -> Result<PerturbedDesign> {
    if !(delta_d_over_d.abs() < 1.0) {
        return Err(Error::invalid(format!(
            "|delta_d/d| must be < 1, got {delta_d_over_d}"
        )));
    }
    let s = 1.0 + delta_d_over_d;
    let mut d = design.clone();
    d.dielectric_thickness *= s;
    d.cs /= s;
    d.cc /= s;
    d.qc *= s.sqrt();
    Ok(PerturbedDesign {
        design: d,
        predicted_fractional_shift: delta_d_over_d / 2.0,
    })
}

/// Draw `n` thickness errors uniformly from `[-max_frac, max_frac]`.
pub fn draw_thickness_scatter(n: usize, max_frac: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            if max_frac > 0.0 {
                rng.random_range(-max_frac..=max_frac)
            } else {
                0.0
            }
        })
        .collect()
}

/// A device together with its loss model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Device {
    pub design: ResonatorDesign,
    pub tls: TlsLossModel,
}

/// Measured zero-flux frequency of the characterised prototype (Hz).
pub const PROTOTYPE_ZERO_FLUX_HZ: f64 = 6.91e9;
/// Operating frequency of the prototype under typical bias (Hz).
pub const PROTOTYPE_OPERATING_HZ: f64 = 6.84e9;
pub const PROTOTYPE_QC: f64 = 329.0;
/// Intrinsic Q reached in the operating regime.
pub const PROTOTYPE_OPERATING_QI: f64 = 6000.0;

/// The characterised prototype at its operating point, with the drive
/// coupling calibrated to the `-98 dBm <-> a = 0.05` anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototype {
    pub device: Device,
    pub bias: BiasPoint,
    pub profile: ResonanceProfile,
    pub coupling: DriveCoupling,
}

impl Prototype {
    pub fn new() -> Self {
        let mut design = ResonatorDesign::baseline()
            .with_zero_flux_frequency(PROTOTYPE_ZERO_FLUX_HZ)
            .expect("positive frequency");
        design.qc = PROTOTYPE_QC;
        let phi_sense = solve_sense_flux(&design, 0.0, PROTOTYPE_OPERATING_HZ, 0.49)
            .expect("operating frequency inside the tuning band");
        let bias = BiasPoint {
            phi_tune: 0.0,
            phi_sense,
        };
        let profile = profile_at(&design, bias, PROTOTYPE_OPERATING_QI).expect("valid bias");
        let coupling = DriveCoupling::calibrate(
            &design,
            bias,
            &profile,
            crate::units::dbm_to_watts(ANCHOR_PG_DBM),
            ANCHOR_DUFFING_A,
        )
        .expect("calibratable");
        Self {
            device: Device {
                design,
                tls: TlsLossModel::default(),
            },
            bias,
            profile,
            coupling,
        }
    }

    /// Drive quantities at generator power `pg_dbm` on resonance.
    pub fn drive(&self, pg_dbm: f64) -> InternalDrive {
        internal_drive(
            &self.device.design,
            self.bias,
            &self.profile,
            &self.coupling,
            crate::units::dbm_to_watts(pg_dbm),
            0.0,
        )
        .expect("operating point is valid")
    }
}

impl Default for Prototype {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    // Independent evaluation of the zero-flux inductance from the constants.
    fn lj0(ic: f64) -> f64 {
        2.067833848e-15 / (4.0 * PI * ic)
    }

    #[test]
    fn squid_inductance_examples() {
        let j = JunctionParams::new(11e-6).unwrap();
        let l0 = squid_inductance(&j, 0.0).unwrap();
        assert_relative_eq!(l0, lj0(11e-6), max_relative = 1e-12);
        assert!((l0 * 1e12 - 14.96).abs() < 0.005);
        let l3 = squid_inductance(&j, 1.0 / 3.0).unwrap();
        assert!((l3 * 1e12 - 29.92).abs() < 0.01);
        assert!(matches!(
            squid_inductance(&j, 0.5),
            Err(Error::FluxAtFrustration { .. })
        ));
        assert!(JunctionParams::new(0.0).is_err());
    }

    #[test]
    fn resonance_frequency_examples() {
        let d = ResonatorDesign::baseline();
        let f00 = resonance_frequency(&d, BiasPoint::ZERO).unwrap();
        // 1/(2 pi sqrt(L C)), L = 324 pH + 2 x 14.96 pH, C = 1.77 pF
        let oracle = 1.0 / (2.0 * PI * ((324e-12 + 2.0 * lj0(11e-6)) * 1.77e-12).sqrt());
        assert_relative_eq!(f00, oracle, max_relative = 1e-12);
        assert!((f00 / 1e9 - 6.359).abs() < 5e-4);
        let third = BiasPoint::new(1.0 / 3.0, 1.0 / 3.0).unwrap();
        let f3 = resonance_frequency(&d, third).unwrap();
        assert!((f3 / 1e9 - 6.106).abs() < 5e-4);
        let f2 = resonance_frequency(&d, BiasPoint::new(0.2, 0.0).unwrap()).unwrap();
        assert!(f2 < f00);
        assert!(resonance_frequency(&d, BiasPoint::new(0.5, 0.0).unwrap()).is_err());
    }

    #[test]
    fn s21_examples() {
        let p = ResonanceProfile::from_quality(6e9, f64::INFINITY, 300.0).unwrap();
        assert!(s21(6e9, &p).norm() < 1e-15);
        let p09 = ResonanceProfile::from_loaded(6e9, 270.0, 300.0).unwrap();
        let z = s21(6e9, &p09);
        assert!((z.re - 0.1).abs() < 1e-12 && z.im.abs() < 1e-12);
        let z = s21(6e9 + 0.5 * p.linewidth, &p);
        assert!((z.re - 0.5).abs() < 1e-12 && (z.im - 0.5).abs() < 1e-12);
    }

    #[test]
    fn tls_examples() {
        let m = TlsLossModel::default();
        assert_relative_eq!(tls_qi(&m, 0.0), 1000.0, max_relative = 1e-12);
        let tls = 1.0 / 1000.0 - 1.0 / 1e5;
        let at_sat = 1.0 / tls_qi(&m, 50.0) - 1e-5;
        assert_relative_eq!(at_sat, tls / 2f64.sqrt(), max_relative = 1e-12);
        let mut last = 0.0;
        for e in [0.0, 10.0, 50.0, 300.0, 1e4] {
            let q = tls_qi(&m, e);
            assert!(q > last);
            last = q;
        }
        assert!(TlsLossModel::new(1e5, 1e3, 50.0).is_err());
    }

    #[test]
    fn duffing_alpha_for_baseline() {
        let d = ResonatorDesign::baseline();
        let p = ResonanceProfile::from_loaded(6.359e9, 300.0, 338.0).unwrap();
        let zero = duffing_a(&d, BiasPoint::ZERO, &p, 0.0).unwrap();
        assert_eq!(zero.a, 0.0);
        assert!((zero.alpha - 0.0845).abs() < 1e-4);
        // a = (alpha Qr / 4) (I / Ic)^2, Ic = 22 uA at zero flux
        let ic = 22e-6;
        let s = duffing_a(&d, BiasPoint::ZERO, &p, ic).unwrap();
        assert!((s.a - 6.34).abs() < 0.01);
        assert!(s.bifurcated);
        let small = duffing_a(&d, BiasPoint::ZERO, &p, 0.1 * ic).unwrap();
        assert!(!small.bifurcated);
    }

    #[test]
    fn internal_drive_scaling() {
        let proto = Prototype::new();
        let z = proto.drive(-400.0);
        assert!(z.current < 1e-15 && z.e_field < 1e-9);
        let d = &proto.device.design;
        let p1 = internal_drive(d, proto.bias, &proto.profile, &proto.coupling, 1e-13, 0.0).unwrap();
        let p2 = internal_drive(d, proto.bias, &proto.profile, &proto.coupling, 2e-13, 0.0).unwrap();
        assert_relative_eq!(p2.energy, 2.0 * p1.energy, max_relative = 1e-12);
        assert_relative_eq!(p2.e_field, 2f64.sqrt() * p1.e_field, max_relative = 1e-12);
        let a1 = duffing_a(d, proto.bias, &proto.profile, p1.current).unwrap().a;
        let a2 = duffing_a(d, proto.bias, &proto.profile, p2.current).unwrap().a;
        assert_relative_eq!(a2, 2.0 * a1, max_relative = 1e-12);
        let off = internal_drive(
            d,
            proto.bias,
            &proto.profile,
            &proto.coupling,
            1e-13,
            proto.profile.linewidth / 2.0,
        )
        .unwrap();
        assert_relative_eq!(off.energy, p1.energy / 2.0, max_relative = 1e-12);
        assert!(internal_drive(d, proto.bias, &proto.profile, &proto.coupling, -1.0, 0.0).is_err());
    }

    #[test]
    fn prototype_anchor() {
        let proto = Prototype::new();
        assert_relative_eq!(
            proto.device.design.zero_flux_frequency(),
            PROTOTYPE_ZERO_FLUX_HZ,
            max_relative = 1e-12
        );
        assert_relative_eq!(proto.profile.f0, PROTOTYPE_OPERATING_HZ, max_relative = 1e-12);
        let drive = proto.drive(ANCHOR_PG_DBM);
        let a = duffing_a(&proto.device.design, proto.bias, &proto.profile, drive.current)
            .unwrap()
            .a;
        assert_relative_eq!(a, 0.05, max_relative = 1e-9);
    }

    #[test]
    fn perturbation_examples() {
        let d = ResonatorDesign::baseline().with_zero_flux_frequency(6e9).unwrap();
        let same = perturb_design(&d, 0.0).unwrap();
        assert_eq!(same.design, d);
        let up = perturb_design(&d, 0.10).unwrap();
        let df = up.design.zero_flux_frequency() - 6e9;
        assert!((df - 300e6).abs() < 15e6, "df = {df}");
        let down = perturb_design(&d, -0.10).unwrap();
        let exact = down.design.zero_flux_frequency() / 6e9 - 1.0;
        assert_relative_eq!(exact, (0.9f64).sqrt() - 1.0, max_relative = 1e-9);
        assert!((exact - (-0.05)).abs() <= 0.01);
        assert!(perturb_design(&d, 1.0).is_err());
    }

    #[test]
    fn scatter_is_seeded_and_bounded() {
        let a = draw_thickness_scatter(100, 0.1, 7);
        assert_eq!(a, draw_thickness_scatter(100, 0.1, 7));
        assert!(a.iter().all(|x| x.abs() <= 0.1));
        assert_ne!(a, draw_thickness_scatter(100, 0.1, 8));
        assert!(draw_thickness_scatter(5, 0.0, 1).iter().all(|x| *x == 0.0));
    }

    #[test]
    fn canonical_bias_wraps() {
        let b = BiasPoint::new(1.25, -0.75).unwrap().canonical();
        assert!((b.phi_tune - 0.25).abs() < 1e-15);
        assert!((b.phi_sense - 0.25).abs() < 1e-15);
        let edge = BiasPoint::new(0.5, -0.5).unwrap().canonical();
        assert_eq!(edge.phi_tune, -0.5);
        assert_eq!(edge.phi_sense, -0.5);
    }

    fn flux() -> impl Strategy<Value = f64> {
        -0.49f64..0.49
    }

    proptest! {
        #[test]
        fn frequency_is_periodic_and_even(a in flux(), b in flux()) {
            let d = ResonatorDesign::baseline();
            let f = resonance_frequency(&d, BiasPoint { phi_tune: a, phi_sense: b }).unwrap();
            for shifted in [
                BiasPoint { phi_tune: a + 1.0, phi_sense: b },
                BiasPoint { phi_tune: a, phi_sense: b - 1.0 },
                BiasPoint { phi_tune: -a, phi_sense: b },
                BiasPoint { phi_tune: a, phi_sense: -b },
            ] {
                let g = resonance_frequency(&d, shifted).unwrap();
                prop_assert!(((g - f) / f).abs() < 1e-12);
            }
        }

        #[test]
        fn frequency_decreases_with_flux(a in 0.0f64..0.48, da in 1e-4f64..0.01, b in 0.0f64..0.48) {
            let d = ResonatorDesign::baseline();
            let f = |t: f64, s: f64| resonance_frequency(&d, BiasPoint { phi_tune: t, phi_sense: s }).unwrap();
            prop_assert!(f(a + da, b) < f(a, b));
            prop_assert!(f(b, a + da) < f(b, a));
            prop_assert!(f(a, b) <= f(0.0, 0.0));
        }

        #[test]
        fn profile_composition(f0 in 1e9f64..1e10, qi in 10.0f64..1e6, qc in 10.0f64..1e5) {
            let p = ResonanceProfile::from_quality(f0, qi, qc).unwrap();
            let lhs = 1.0 / p.qr;
            let rhs = 1.0 / p.qi + 1.0 / p.qc;
            prop_assert!(((lhs - rhs) / lhs).abs() < 1e-12);
            prop_assert!(((p.linewidth * p.qr - f0) / f0).abs() < 1e-12);
        }

        #[test]
        fn s21_bounded_with_dip_at_f0(qr in 50.0f64..2000.0, ratio in 0.05f64..1.0, x in -0.2f64..0.2) {
            let p = ResonanceProfile::from_loaded(6e9, qr, qr / ratio).unwrap();
            let z = s21(6e9 * (1.0 + x), &p);
            prop_assert!(z.norm() <= 1.0 + 1e-12);
            prop_assert!(z.norm() >= 1.0 - ratio - 1e-9);
            let dip = s21(6e9, &p).norm();
            prop_assert!((dip - (1.0 - ratio)).abs() < 1e-9);
            let far = s21(6e9 * (1.0 + 1e4 / qr), &p).norm();
            prop_assert!((far - 1.0).abs() < 1e-3);
        }

        #[test]
        fn first_order_fabrication_shift(dd in -0.1f64..0.1) {
            let d = ResonatorDesign::baseline();
            let p = perturb_design(&d, dd).unwrap();
            let measured = p.design.zero_flux_frequency() / d.zero_flux_frequency() - 1.0;
            prop_assert!((measured - p.predicted_fractional_shift).abs() <= dd * dd + 1e-15);
        }
    }
}
