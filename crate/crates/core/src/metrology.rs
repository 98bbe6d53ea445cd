//! Qubit population curves, flux-noise runs and their spectra.
//!
//! Spectral densities use two-sided levels on a one-sided frequency axis:
//! white noise of per-sample variance `s2` sampled every `tau_s` has level
//! `s2 * tau_s`, and the series variance is the integral over
//! `[-fs/2, fs/2]`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use std::f64::consts::{LN_2, PI};

use crate::fit::{golden_section, levenberg_marquardt, solve_dense, LmOptions};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionCurve {
    /// Half-width `W` (Phi0).
    pub width: f64,
    /// Flux at which `P = 1/2` (Phi0).
    pub center: f64,
}

impl TransitionCurve {
    pub fn new(width: f64, center: f64) -> Result<Self> {
        if !(width > 0.0 && width.is_finite() && center.is_finite()) {
            return Err(Error::invalid(format!("transition width must be positive, got {width}")));
        }
        Ok(Self { width, center })
    }

    /// `dP/dPhi` at `phi_x`.
    pub fn slope(&self, phi_x: f64) -> f64 {
        let t = ((phi_x - self.center) / (2.0 * self.width)).tanh();
        (1.0 - t * t) / (4.0 * self.width)
    }
}

/// `P = (1 + tanh((phi_x - center) / 2W)) / 2`.
pub fn population(phi_x: f64, curve: &TransitionCurve) -> f64 {
    0.5 * (1.0 + ((phi_x - curve.center) / (2.0 * curve.width)).tanh())
}

pub fn invert_population(p: f64, curve: &TransitionCurve) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::OutOfDomain(p));
    }
    Ok(curve.center + 2.0 * curve.width * (2.0 * p - 1.0).atanh())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransitionFit {
    pub curve: TransitionCurve,
    pub residual_rms: f64,
}

/// Least-squares fit of `(W, center)` to `(phi_x, P)` samples.
pub fn fit_transition(samples: &[(f64, f64)]) -> Result<TransitionFit> {
    if samples.len() < 3 {
        return Err(Error::invalid("transition fit needs at least 3 samples"));
    }
    if samples.iter().any(|(x, p)| !(x.is_finite() && p.is_finite())) {
        return Err(Error::invalid("transition samples must be finite"));
    }
    let (p_min, p_max) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s.1), hi.max(s.1)));
    if !(p_min < 0.2 && p_max > 0.8) {
        return Err(Error::InsufficientSpan { p_min, p_max });
    }
    let mut pts = samples.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    // First crossing of a level, by linear interpolation.
    let crossing = |level: f64| -> Option<f64> {
        pts.windows(2).find_map(|w| {
            let ((x0, p0), (x1, p1)) = (w[0], w[1]);
            ((p0 - level) * (p1 - level) <= 0.0 && p0 != p1)
                .then(|| x0 + (level - p0) * (x1 - x0) / (p1 - p0))
        })
    };
    let span = pts[pts.len() - 1].0 - pts[0].0;
    let sign = if pts[pts.len() - 1].1 >= pts[0].1 { 1.0 } else { -1.0 };
    if sign < 0.0 {
        return Err(Error::FitDiverged("population decreases with flux".into()));
    }
    let c0 = crossing(0.5).unwrap_or(pts[0].0 + span / 2.0);
    let w0 = match (crossing(0.2), crossing(0.8)) {
        // P = 0.8 sits atanh(0.6) half-widths above the centre.
        (Some(a), Some(b)) if b > a => (b - a) / (4.0 * 0.6f64.atanh()),
        _ => span / 10.0,
    };
    let residuals = |p: &[f64]| -> Option<Vec<f64>> {
        let curve = TransitionCurve {
            width: w0 * p[1].exp(),
            center: c0 + p[0] * w0,
        };
        Some(pts.iter().map(|(x, y)| population(*x, &curve) - y).collect())
    };
    let sol = levenberg_marquardt(residuals, &[0.0, 0.0], &[1.0, 1.0], LmOptions::default())
        .ok_or_else(|| Error::FitDiverged("transition model evaluation failed".into()))?;
    if !sol.converged {
        return Err(Error::FitDiverged("iteration limit reached".into()));
    }
    let curve = TransitionCurve::new(w0 * sol.params[1].exp(), c0 + sol.params[0] * w0)
        .map_err(|_| Error::FitDiverged("non-positive width".into()))?;
    Ok(TransitionFit {
        curve,
        residual_rms: (sol.cost / pts.len() as f64).sqrt(),
    })
}

/// Gaussian noise with two-sided density `A^2 / f^alpha` between two
/// corner frequencies, built from one Ornstein-Uhlenbeck process per
/// octave.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneOverF {
    /// Amplitude at 1 Hz (Phi0 / sqrt(Hz)).
    pub amplitude: f64,
    pub alpha: f64,
    pub f_low: f64,
    pub f_high: f64,
}

impl OneOverF {
    /// Corners spanning the band resolved by `n` samples at `tau_s`.
    pub fn for_run(amplitude: f64, alpha: f64, n: usize, tau_s: f64) -> Self {
        Self {
            amplitude,
            alpha,
            f_low: 0.25 / (n as f64 * tau_s),
            f_high: 1.0 / tau_s,
        }
    }

    fn corners(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut f = self.f_low;
        while f <= self.f_high {
            out.push(f);
            f *= 2.0;
        }
        out
    }

    pub fn generate(&self, n: usize, tau_s: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        if !(self.amplitude >= 0.0
            && self.alpha > 0.0
            && self.alpha < 2.0
            && self.f_low > 0.0
            && self.f_high > self.f_low
            && tau_s > 0.0)
        {
            return Err(Error::invalid(format!("invalid 1/f generator {self:?}")));
        }
        let mut out = vec![0.0; n];
        if self.amplitude == 0.0 {
            return Ok(out);
        }
        let a2 = self.amplitude * self.amplitude;
        let scale = 2.0 * LN_2 * (PI * self.alpha / 2.0).sin() * a2;
        for fc in self.corners() {
            let v = scale * fc.powf(1.0 - self.alpha);
            let gamma = 2.0 * PI * fc;
            let decay = (-gamma * tau_s).exp();
            let kick = (v * (1.0 - decay * decay)).sqrt();
            let z0: f64 = StandardNormal.sample(rng);
            let mut x = v.sqrt() * z0;
            for o in out.iter_mut() {
                *o += x;
                let z: f64 = StandardNormal.sample(rng);
                x = x * decay + kick * z;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Inversion {
    /// Clamp P to `[1/2n, 1 - 1/2n]` and invert the curve exactly.
    Exact,
    /// First-order inversion about the bias point.
    Linearized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseRun {
    pub curve: TransitionCurve,
    /// Applied flux without noise (Phi0).
    pub bias: f64,
    pub noise: OneOverF,
    pub shots_per_sample: u64,
    pub n_samples: usize,
    pub tau_s: f64,
    pub inversion: Inversion,
    pub seed: u64,
}

/// Flux series inferred from repeated population measurements.
pub fn simulate_noise_run(run: &NoiseRun) -> Result<Vec<f64>> {
    if run.shots_per_sample == 0 || run.n_samples == 0 || !(run.tau_s > 0.0) {
        return Err(Error::invalid("noise run needs positive shots, samples and tau_s"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let flux = run.noise.generate(run.n_samples, run.tau_s, &mut rng)?;
    let n = run.shots_per_sample;
    let p_bias = population(run.bias, &run.curve);
    let slope = run.curve.slope(run.bias);
    let lo = 0.5 / n as f64;
    flux.into_iter()
        .map(|dphi| {
            let p = population(run.bias + dphi, &run.curve);
            let k = Binomial::new(n, p)
                .map_err(|e| Error::invalid(e.to_string()))?
                .sample(&mut rng);
            let p_hat = k as f64 / n as f64;
            match run.inversion {
                Inversion::Linearized => Ok(run.bias + (p_hat - p_bias) / slope),
                Inversion::Exact => invert_population(p_hat.clamp(lo, 1.0 - lo), &run.curve),
            }
        })
        .collect()
}

/// Predicted white floor `tau_s * 4 W^2 / shots` (Phi0^2 / Hz).
pub fn white_floor(width: f64, tau_s: f64, shots_per_sample: u64) -> f64 {
    tau_s * 4.0 * width * width / shots_per_sample as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Spectrum {
    pub freqs: Vec<f64>,
    pub density: Vec<f64>,
    pub tau_s: f64,
    pub segment_len: usize,
    pub n_segments: usize,
}

impl Spectrum {
    pub fn df(&self) -> f64 {
        1.0 / (self.segment_len as f64 * self.tau_s)
    }

    /// Integral of the density over `[-fs/2, fs/2]`.
    pub fn total_power(&self) -> f64 {
        let n = self.density.len();
        let inner: f64 = self.density[1..n - 1].iter().sum();
        (self.density[0] + 2.0 * inner + self.density[n - 1]) * self.df()
    }
}

pub const MIN_PSD_LEN: usize = 256;

/// Welch estimate: Hann window, 50% overlap, at least 8 segments.
pub fn psd(series: &[f64], tau_s: f64) -> Result<Spectrum> {
    let n = series.len();
    if n < MIN_PSD_LEN {
        return Err(Error::invalid(format!("PSD needs at least {MIN_PSD_LEN} samples, got {n}")));
    }
    if !(tau_s > 0.0) {
        return Err(Error::invalid(format!("tau_s must be positive, got {tau_s}")));
    }
    // With 50% overlap, L <= 2N/9 guarantees 8 segments.
    let mut seg = 1usize;
    while seg * 2 <= 2 * n / 9 {
        seg *= 2;
    }
    let hop = seg / 2;
    let n_segments = (n - seg) / hop + 1;
    let mean = series.iter().sum::<f64>() / n as f64;
    let window: Vec<f64> = (0..seg)
        .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / seg as f64).cos()))
        .collect();
    let w2: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::new().plan_fft_forward(seg);
    let half = seg / 2;
    let mut acc = vec![0.0; half + 1];
    let mut buf = vec![Complex::new(0.0, 0.0); seg];
    for s in 0..n_segments {
        let start = s * hop;
        for i in 0..seg {
            buf[i] = Complex::new((series[start + i] - mean) * window[i], 0.0);
        }
        fft.process(&mut buf);
        for (k, a) in acc.iter_mut().enumerate() {
            *a += buf[k].norm_sqr();
        }
    }
    let norm = tau_s / (w2 * n_segments as f64);
    Ok(Spectrum {
        freqs: (0..=half).map(|k| k as f64 / (seg as f64 * tau_s)).collect(),
        density: acc.into_iter().map(|a| a * norm).collect(),
        tau_s,
        segment_len: seg,
        n_segments,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseFit {
    /// 1/f amplitude at 1 Hz (Phi0 / sqrt(Hz)).
    pub amplitude: f64,
    pub alpha: f64,
    /// White level (Phi0^2 / Hz).
    pub white: f64,
    pub tau_s: f64,
    /// RMS of `ln(model / data)` over the fitted bins.
    pub residual: f64,
}

const ALPHA_RANGE: (f64, f64) = (0.2, 2.5);

/// Fit `S(f) = A^2 / f^alpha + w` to all bins above DC.
///
/// Bins are treated as scaled chi-squared variates and the fit maximises
/// the Whittle likelihood `-sum(S/m + ln m)`. Weighting by the data
/// instead would bias the levels low by roughly one over the number of
/// averaged segments. For fixed `alpha` the model is linear in `(A^2, w)`
/// and is solved by iteratively reweighted least squares; `alpha` is found
/// by a golden-section search.
pub fn fit_noise(spectrum: &Spectrum) -> Result<NoiseFit> {
    let bins: Vec<(f64, f64)> = spectrum
        .freqs
        .iter()
        .zip(&spectrum.density)
        .filter(|(f, s)| **f > 0.0 && **s > 0.0 && s.is_finite())
        .map(|(f, s)| (*f, *s))
        .collect();
    if bins.len() < 4 {
        return Err(Error::invalid("noise fit needs at least 4 positive bins"));
    }
    let f_lo = bins[0].0;
    let f_hi = bins[bins.len() - 1].0;
    if f_hi / f_lo < 100.0 {
        return Err(Error::invalid(format!(
            "noise fit needs two decades of frequency, got {f_lo}..{f_hi} Hz"
        )));
    }

    let solve = |alpha: f64| -> Option<(f64, f64)> {
        let weighted = |weight: &dyn Fn(f64, f64) -> f64| -> Option<(f64, f64)> {
            let mut a = [0.0; 4];
            let mut b = [0.0; 2];
            for &(f, s) in &bins {
                let w = weight(f, s);
                let g = [f.powf(-alpha), 1.0];
                for i in 0..2 {
                    b[i] += w * g[i] * s;
                    for j in 0..2 {
                        a[i * 2 + j] += w * g[i] * g[j];
                    }
                }
            }
            let x = solve_dense(&a, &b, 2)?;
            (x[0] >= 0.0 && x[1] >= 0.0).then_some((x[0], x[1]))
        };
        let mut c = weighted(&|_, s| 1.0 / (s * s));
        for _ in 0..IRLS_ITERATIONS {
            let Some((a2, w)) = c else { break };
            let next = weighted(&|f, _| (a2 * f.powf(-alpha) + w).powi(-2));
            let done = next.is_some_and(|(na, nw)| {
                (na - a2).abs() <= 1e-12 * (na + a2) && (nw - w).abs() <= 1e-12 * (nw + w)
            });
            c = next;
            if done {
                break;
            }
        }
        // Single components have closed-form maxima.
        let n = bins.len() as f64;
        let only_white = bins.iter().map(|&(_, s)| s).sum::<f64>() / n;
        let only_flicker = bins.iter().map(|&(f, s)| s * f.powf(alpha)).sum::<f64>() / n;
        let cost = |c: (f64, f64)| whittle_cost(&bins, alpha, c);
        [c, Some((0.0, only_white)), Some((only_flicker, 0.0))]
            .into_iter()
            .flatten()
            .min_by(|p, q| cost(*p).total_cmp(&cost(*q)))
    };
    let objective = |alpha: f64| {
        solve(alpha)
            .map(|c| whittle_cost(&bins, alpha, c))
            .unwrap_or(f64::INFINITY)
    };
    let alpha = golden_section(objective, ALPHA_RANGE.0, ALPHA_RANGE.1, 1e-6);
    let (a2, white) =
        solve(alpha).ok_or_else(|| Error::FitDiverged("singular noise normal equations".into()))?;
    let cost = log_cost(&bins, alpha, (a2, white));
    if !(cost.is_finite()) || a2 + white <= 0.0 {
        return Err(Error::FitDiverged("noise model does not describe the spectrum".into()));
    }
    Ok(NoiseFit {
        amplitude: a2.sqrt(),
        alpha,
        white,
        tau_s: spectrum.tau_s,
        residual: (cost / bins.len() as f64).sqrt(),
    })
}

const IRLS_ITERATIONS: usize = 100;

fn model(f: f64, alpha: f64, (a2, white): (f64, f64)) -> f64 {
    a2 * f.powf(-alpha) + white
}

fn whittle_cost(bins: &[(f64, f64)], alpha: f64, c: (f64, f64)) -> f64 {
    bins.iter()
        .map(|&(f, s)| {
            let m = model(f, alpha, c);
            if m > 0.0 {
                s / m + m.ln()
            } else {
                f64::INFINITY
            }
        })
        .sum()
}

fn log_cost(bins: &[(f64, f64)], alpha: f64, c: (f64, f64)) -> f64 {
    bins.iter()
        .map(|&(f, s)| {
            let m = model(f, alpha, c);
            if m > 0.0 {
                (m / s).ln().powi(2)
            } else {
                f64::INFINITY
            }
        })
        .sum()
}
