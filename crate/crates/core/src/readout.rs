//! Frequency-multiplexed readout: tone comb, array transmission, per-shot
//! noise, state discrimination and the SNR / bit-error budget.
//!
//! All complex amplitudes are normalised to a unit carrier, so noise
//! enters with per-quadrature variance `k Tn B_eff / Pg`.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::erf::erfc;

use crate::fit::bisect;
use crate::shift_register::{Direction, ShiftLine};
use crate::squid::{duffing_a, internal_drive, s21, Prototype, ResonanceProfile};
use crate::units::{dbm_to_watts, watts_to_dbm, K_B};
use crate::{Error, Result};

/// Largest global shift of the readout band (Hz).
pub const MAX_LO_OFFSET_HZ: f64 = 750e6;
/// Measured system noise temperature (K).
pub const DEFAULT_TN_K: f64 = 7.9;
/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959963984540054;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToneComb {
    pub tones_hz: Vec<f64>,
    pub pg_dbm: Vec<f64>,
    pub band_center_hz: f64,
    pub band_width_hz: f64,
    pub lo_offset_hz: f64,
}

impl ToneComb {
    pub fn new(
        tones_hz: Vec<f64>,
        pg_dbm: Vec<f64>,
        band_center_hz: f64,
        band_width_hz: f64,
        lo_offset_hz: f64,
    ) -> Result<Self> {
        if !(lo_offset_hz.abs() <= MAX_LO_OFFSET_HZ) {
            return Err(Error::invalid(format!(
                "|lo offset| {lo_offset_hz} Hz exceeds {MAX_LO_OFFSET_HZ} Hz"
            )));
        }
        if tones_hz.len() != pg_dbm.len() {
            return Err(Error::invalid("one generator power per tone required"));
        }
        if !(band_width_hz > 0.0) {
            return Err(Error::invalid(format!("band width must be positive, got {band_width_hz}")));
        }
        let lo = band_center_hz - band_width_hz / 2.0 + lo_offset_hz;
        let hi = band_center_hz + band_width_hz / 2.0 + lo_offset_hz;
        if let Some(f) = tones_hz.iter().find(|f| !(lo..=hi).contains(*f)) {
            return Err(Error::invalid(format!("tone {f} Hz outside band [{lo}, {hi}] Hz")));
        }
        Ok(Self {
            tones_hz,
            pg_dbm,
            band_center_hz,
            band_width_hz,
            lo_offset_hz,
        })
    }

    pub fn len(&self) -> usize {
        self.tones_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tones_hz.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseModel {
    pub tn_k: f64,
    /// Detection bandwidth used for budget calculations (Hz).
    pub bandwidth_hz: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn new(tn_k: f64, bandwidth_hz: f64, seed: u64) -> Result<Self> {
        if !(tn_k >= 0.0 && bandwidth_hz > 0.0) {
            return Err(Error::invalid(format!(
                "noise model needs Tn >= 0 and B > 0 (got {tn_k}, {bandwidth_hz})"
            )));
        }
        Ok(Self {
            tn_k,
            bandwidth_hz,
            seed,
        })
    }

    /// Per-quadrature noise standard deviation for a unit carrier of power
    /// `pg_watts` integrated for `integration_s`.
    pub fn sigma(&self, pg_watts: f64, integration_s: f64) -> f64 {
        (K_B * self.tn_k / integration_s / pg_watts).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShotRecord {
    pub tone_id: usize,
    pub rep: usize,
    pub iq: Complex64,
    pub truth: Option<bool>,
    pub decided: Option<bool>,
}

/// Product of the individual resonator transmissions at `f`.
pub fn composite_s21(array: &[ResonanceProfile], f: f64) -> Complex64 {
    array
        .iter()
        .fold(Complex64::new(1.0, 0.0), |acc, p| acc * s21(f, p))
}

fn gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(sigma * re, sigma * im)
}

fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `reps` integrated shots per tone. Each tone draws from its own random
/// substream, so results do not depend on thread scheduling.
pub fn acquire(
    comb: &ToneComb,
    array: &[ResonanceProfile],
    noise: &NoiseModel,
    integration_s: f64,
    reps: usize,
) -> Result<Vec<ShotRecord>> {
    if !(integration_s > 0.0) {
        return Err(Error::invalid(format!("integration time must be positive, got {integration_s}")));
    }
    let per_tone: Vec<Vec<ShotRecord>> = (0..comb.len())
        .into_par_iter()
        .map(|t| {
            let clean = composite_s21(array, comb.tones_hz[t]);
            let sigma = noise.sigma(dbm_to_watts(comb.pg_dbm[t]), integration_s);
            let mut rng = substream(noise.seed, t as u64);
            (0..reps)
                .map(|rep| ShotRecord {
                    tone_id: t,
                    rep,
                    iq: clean + gaussian(&mut rng, sigma),
                    truth: None,
                    decided: None,
                })
                .collect()
        })
        .collect();
    Ok(per_tone.into_iter().flatten().collect())
}

/// Half the separation of the two fully modulated states over the
/// per-quadrature noise amplitude.
pub fn snr_budget(pg_dbm: f64, tn_k: f64, bandwidth_hz: f64, qr_over_qc: f64) -> Result<f64> {
    if !(tn_k > 0.0 && bandwidth_hz > 0.0 && qr_over_qc > 0.0 && pg_dbm.is_finite()) {
        return Err(Error::invalid("snr_budget needs positive Tn, B and Qr/Qc"));
    }
    Ok(qr_over_qc * (dbm_to_watts(pg_dbm) / (K_B * tn_k * bandwidth_hz)).sqrt() / 2.0)
}

/// Generator power (dBm) at which [`snr_budget`] equals `snr`.
pub fn pg_for_snr(snr: f64, tn_k: f64, bandwidth_hz: f64, qr_over_qc: f64) -> Result<f64> {
    if !(snr > 0.0 && tn_k > 0.0 && bandwidth_hz > 0.0 && qr_over_qc > 0.0) {
        return Err(Error::invalid("pg_for_snr needs positive arguments"));
    }
    let amp = 2.0 * snr / qr_over_qc;
    Ok(watts_to_dbm(amp * amp * K_B * tn_k * bandwidth_hz))
}

/// Gaussian tail `Q(snr)`.
pub fn ber_from_snr(snr: f64) -> Result<f64> {
    if !(snr >= 0.0) {
        return Err(Error::invalid(format!("snr must be >= 0, got {snr}")));
    }
    Ok(0.5 * erfc(snr / std::f64::consts::SQRT_2))
}

/// Maps calibration centroids to `(+-s, 0)`; state 1 lies on the positive
/// in-phase side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Discriminator {
    pub offset: Complex64,
    /// Unit rotation applied after the offset.
    pub rotation: Complex64,
    pub half_separation: f64,
    /// Pooled per-quadrature noise of the calibration shots.
    pub sigma: f64,
}

pub const MIN_CALIBRATION_SHOTS: usize = 50;

fn centroid_and_variance(shots: &[Complex64]) -> (Complex64, f64) {
    let n = shots.len() as f64;
    let m = shots.iter().sum::<Complex64>() / n;
    let v = shots.iter().map(|z| (z - m).norm_sqr()).sum::<f64>() / n;
    (m, v)
}

impl Discriminator {
    pub fn calibrate(state0: &[Complex64], state1: &[Complex64]) -> Result<Self> {
        if state0.len() < MIN_CALIBRATION_SHOTS || state1.len() < MIN_CALIBRATION_SHOTS {
            return Err(Error::invalid(format!(
                "need at least {MIN_CALIBRATION_SHOTS} calibration shots per state"
            )));
        }
        let (m0, v0) = centroid_and_variance(state0);
        let (m1, v1) = centroid_and_variance(state1);
        let d = m1 - m0;
        let separation = d.norm();
        // v is the complex variance, twice the per-quadrature variance.
        let sigma = ((v0 + v1) / 4.0).sqrt();
        let threshold = 3.0 * sigma;
        if !(separation >= threshold) || separation == 0.0 {
            return Err(Error::DegenerateStates {
                separation,
                threshold,
            });
        }
        Ok(Self {
            offset: (m0 + m1) / 2.0,
            rotation: d.conj() / separation,
            half_separation: separation / 2.0,
            sigma,
        })
    }

    pub fn transform(&self, z: Complex64) -> Complex64 {
        (z - self.offset) * self.rotation
    }

    pub fn decide(&self, z: Complex64) -> bool {
        self.transform(z).re > 0.0
    }
}

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n_f = n as f64;
    let p = k as f64 / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let center = (p + z2 / (2.0 * n_f)) / denom;
    let half = z / denom * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Resonator transmission at the probe tone for the two states, which
/// sit half a linewidth either side of the tone.
pub fn state_points(profile: &ResonanceProfile, tone_hz: f64) -> (Complex64, Complex64) {
    let half = tone_hz / profile.qr / 2.0;
    let s0 = s21(tone_hz, &profile.with_f0(tone_hz + half));
    let s1 = s21(tone_hz, &profile.with_f0(tone_hz - half));
    (s0, s1)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FidelityConfig {
    pub profile: ResonanceProfile,
    pub tone_hz: f64,
    pub tn_k: f64,
    pub integration_s: f64,
    /// Generator power; ignored when `forced_snr` is set.
    pub pg_dbm: f64,
    /// Choose the generator power that gives exactly this SNR.
    pub forced_snr: Option<f64>,
    /// Data pattern loaded into the shift register each repeat.
    pub pattern: Vec<bool>,
    pub n_repeats: usize,
    pub calibration_shots: usize,
    /// Number of data shots kept in the report.
    pub dump_limit: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FidelityReport {
    pub pg_dbm: f64,
    pub snr: f64,
    pub n_shots: u64,
    pub n_errors: u64,
    pub ber: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
    pub predicted_ber: f64,
    pub discriminator: Discriminator,
    #[serde(skip)]
    pub shots: Vec<ShotRecord>,
}

impl FidelityReport {
    pub fn predicted_within_interval(&self) -> bool {
        (self.wilson_low..=self.wilson_high).contains(&self.predicted_ber)
    }
}

const SHOTS_PER_CHUNK: usize = 1 << 14;

/// Load the pattern into a shift register, stream it to the detector,
/// read each bit with one noisy shot and compare with the truth.
pub fn end_to_end_fidelity(cfg: &FidelityConfig) -> Result<FidelityReport> {
    if cfg.pattern.is_empty() || cfg.n_repeats == 0 {
        return Err(Error::invalid("fidelity run needs a non-empty pattern and repeats"));
    }
    if !(cfg.tn_k > 0.0 && cfg.integration_s > 0.0) {
        return Err(Error::invalid("fidelity run needs Tn > 0 and integration time > 0"));
    }
    let (s0, s1) = state_points(&cfg.profile, cfg.tone_hz);
    let half_sep = (s1 - s0).norm() / 2.0;
    let b_eff = 1.0 / cfg.integration_s;
    let pg_dbm = match cfg.forced_snr {
        Some(snr) if snr > 0.0 => {
            let sigma = half_sep / snr;
            watts_to_dbm(K_B * cfg.tn_k * b_eff / (sigma * sigma))
        }
        Some(snr) => return Err(Error::invalid(format!("forced snr must be positive, got {snr}"))),
        None => cfg.pg_dbm,
    };
    let noise = NoiseModel::new(cfg.tn_k, b_eff, cfg.seed)?;
    let sigma = noise.sigma(dbm_to_watts(pg_dbm), cfg.integration_s);
    let snr = half_sep / sigma;

    // The register is deterministic: stream once, reuse for every repeat.
    let mut line = ShiftLine::new(3 * cfg.pattern.len(), Direction::Forward).load(&cfg.pattern)?;
    let streamed: Vec<bool> = line
        .stream_out(cfg.pattern.len())?
        .into_iter()
        .map(|b| b.bit)
        .collect();

    let mut cal_rng = substream(cfg.seed, 0);
    let n_cal = cfg.calibration_shots.max(MIN_CALIBRATION_SHOTS);
    let ref0: Vec<Complex64> = (0..n_cal).map(|_| s0 + gaussian(&mut cal_rng, sigma)).collect();
    let ref1: Vec<Complex64> = (0..n_cal).map(|_| s1 + gaussian(&mut cal_rng, sigma)).collect();
    let disc = Discriminator::calibrate(&ref0, &ref1)?;

    let n_bits = streamed.len();
    let total = cfg.n_repeats * n_bits;
    let n_chunks = total.div_ceil(SHOTS_PER_CHUNK);
    let chunks: Vec<(u64, Vec<ShotRecord>)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = substream(cfg.seed, 1 + c as u64);
            let start = c * SHOTS_PER_CHUNK;
            let end = (start + SHOTS_PER_CHUNK).min(total);
            let mut errors = 0;
            let mut dump = Vec::new();
            for k in start..end {
                let truth = streamed[k % n_bits];
                let iq = if truth { s1 } else { s0 } + gaussian(&mut rng, sigma);
                let decided = disc.decide(iq);
                errors += u64::from(decided != truth);
                if k < cfg.dump_limit {
                    dump.push(ShotRecord {
                        tone_id: 0,
                        rep: k,
                        iq,
                        truth: Some(truth),
                        decided: Some(decided),
                    });
                }
            }
            (errors, dump)
        })
        .collect();
    let n_errors: u64 = chunks.iter().map(|c| c.0).sum();
    let shots = chunks.into_iter().flat_map(|c| c.1).collect();
    let n_shots = total as u64;
    let (wilson_low, wilson_high) = wilson_interval(n_errors, n_shots, Z_95);
    Ok(FidelityReport {
        pg_dbm,
        snr,
        n_shots,
        n_errors,
        ber: n_errors as f64 / n_shots as f64,
        wilson_low,
        wilson_high,
        predicted_ber: ber_from_snr(snr)?,
        discriminator: disc,
        shots,
    })
}

/// Fraction of the cycle spent reading out.
pub fn duty_cycle(readout_time: f64, cycle_time: f64) -> Result<f64> {
    if !(readout_time >= 0.0 && cycle_time > 0.0 && readout_time <= cycle_time) {
        return Err(Error::invalid(format!(
            "need 0 <= readout time <= cycle time (got {readout_time}, {cycle_time})"
        )));
    }
    Ok(readout_time / cycle_time)
}

pub fn sustained_rate(raw_rate: f64, duty: f64) -> f64 {
    raw_rate * duty
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OperableRegion {
    pub pg_low_dbm: f64,
    pub pg_high_dbm: f64,
    pub empty: bool,
}

/// Drive powers with `snr >= snr_min` and Duffing shift `a <= a_max`.
pub fn operable_region(
    device: &Prototype,
    snr_min: f64,
    a_max: f64,
    tn_k: f64,
    bandwidth_hz: f64,
) -> Result<OperableRegion> {
    if !(a_max > 0.0) {
        return Err(Error::invalid(format!("a_max must be positive, got {a_max}")));
    }
    let p = &device.profile;
    let pg_low_dbm = pg_for_snr(snr_min, tn_k, bandwidth_hz, p.qr / p.qc)?;
    let a_at = |dbm: f64| -> f64 {
        internal_drive(
            &device.device.design,
            device.bias,
            p,
            &device.coupling,
            dbm_to_watts(dbm),
            0.0,
        )
        .and_then(|d| duffing_a(&device.device.design, device.bias, p, d.current))
        .map(|s| s.a)
        .unwrap_or(f64::NAN)
    };
    let (lo, hi) = (-200.0, 30.0);
    if a_at(lo).is_nan() {
        return Err(Error::invalid("device operating point is invalid"));
    }
    let pg_high_dbm = if a_at(hi) <= a_max {
        hi
    } else if a_at(lo) > a_max {
        lo
    } else {
        bisect(|x| a_at(x) - a_max, lo, hi, 1e-9)
    };
    Ok(OperableRegion {
        pg_low_dbm,
        pg_high_dbm,
        empty: pg_low_dbm > pg_high_dbm,
    })
}
