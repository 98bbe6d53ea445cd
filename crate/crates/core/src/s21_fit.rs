//! Least-squares fit of the shunt-resonator transmission model to a sweep.

use num_complex::Complex64;
use serde::Serialize;

use crate::fit::{levenberg_marquardt, LmOptions};
use crate::squid::{s21, ResonanceProfile};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct S21Fit {
    pub profile: ResonanceProfile,
    /// RMS complex residual per sweep point.
    pub residual_rms: f64,
}

const MIN_POINTS: usize = 20;
const MIN_SPAN_LINEWIDTHS: f64 = 3.0;
/// Residual RMS above this fraction of the dip depth is a failed fit.
const MAX_RELATIVE_RESIDUAL: f64 = 0.25;

/// Fit `(f0, Qr, Qc)` of `S21 = 1 - (Qr/Qc)/(1 + 2i Qr x)` by unweighted
/// complex least squares.
///
/// Initial values come from the deepest point of the dip (f0), its depth
/// (`Qr/Qc`) and its half-power width (`Qr`).
pub fn fit_s21(sweep: &[(f64, Complex64)]) -> Result<S21Fit> {
    if sweep.len() < MIN_POINTS {
        return Err(Error::invalid(format!(
            "sweep needs at least {MIN_POINTS} points, got {}",
            sweep.len()
        )));
    }
    if sweep
        .iter()
        .any(|(f, z)| !(f.is_finite() && *f > 0.0 && z.re.is_finite() && z.im.is_finite()))
    {
        return Err(Error::invalid("sweep contains non-finite or non-positive entries"));
    }
    let mut pts = sweep.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));

    let one = Complex64::new(1.0, 0.0);
    let depth: Vec<f64> = pts.iter().map(|(_, z)| (one - z).norm()).collect();
    let (k, &dmax) = depth
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty");
    if dmax < 1e-9 {
        return Err(Error::FitDiverged("no resonance dip in sweep".into()));
    }
    let f0_guess = pts[k].0;

    // Half-power points of |1 - S21|^2 around the peak.
    let half = dmax * dmax / 2.0;
    let mut lo = k;
    while lo > 0 && depth[lo - 1] * depth[lo - 1] >= half {
        lo -= 1;
    }
    let mut hi = k;
    while hi + 1 < pts.len() && depth[hi + 1] * depth[hi + 1] >= half {
        hi += 1;
    }
    let spacing = (pts[pts.len() - 1].0 - pts[0].0) / (pts.len() - 1) as f64;
    let width = (pts[hi].0 - pts[lo].0).max(spacing);
    let qr_guess = f0_guess / width;
    let ratio_guess = dmax.min(0.999);

    let span = pts[pts.len() - 1].0 - pts[0].0;
    if span < MIN_SPAN_LINEWIDTHS * width {
        return Err(Error::invalid(format!(
            "sweep spans {:.2} linewidths, need at least {MIN_SPAN_LINEWIDTHS}",
            span / width
        )));
    }

    // Parameters: f0 offset in guessed linewidths, ln Qr, ln(Qr/Qc).
    let model = |p: &[f64]| -> Option<ResonanceProfile> {
        let f0 = f0_guess + p[0] * width;
        let qr = p[1].exp();
        let ratio = p[2].exp();
        if !(f0 > 0.0 && qr.is_finite() && ratio.is_finite()) {
            return None;
        }
        Some(ResonanceProfile {
            f0,
            qr,
            qi: f64::INFINITY,
            qc: qr / ratio,
            linewidth: f0 / qr,
            duffing_a: 0.0,
        })
    };
    let residuals = |p: &[f64]| -> Option<Vec<f64>> {
        let prof = model(p)?;
        let mut r = Vec::with_capacity(2 * pts.len());
        for (f, z) in &pts {
            let d = s21(*f, &prof) - z;
            r.push(d.re);
            r.push(d.im);
        }
        Some(r)
    };
    let x0 = [0.0, qr_guess.ln(), ratio_guess.ln()];
    let sol = levenberg_marquardt(residuals, &x0, &[1.0, 1.0, 1.0], LmOptions::default())
        .ok_or_else(|| Error::FitDiverged("model evaluation failed".into()))?;
    if !sol.converged {
        return Err(Error::FitDiverged("iteration limit reached".into()));
    }
    let fitted = model(&sol.params).ok_or_else(|| Error::FitDiverged("parameters left domain".into()))?;
    let ratio = fitted.qr / fitted.qc;
    let residual_rms = (sol.cost / pts.len() as f64).sqrt();

    if !(fitted.f0 > 0.0 && fitted.qr > 0.0 && fitted.qc > 0.0) {
        return Err(Error::FitDiverged("non-positive parameters".into()));
    }
    if ratio > 1.02 {
        return Err(Error::FitDiverged(format!(
            "fitted Qr/Qc = {ratio:.4} implies negative intrinsic loss"
        )));
    }
    if residual_rms > MAX_RELATIVE_RESIDUAL * ratio {
        return Err(Error::FitDiverged(format!(
            "residual {residual_rms:.3e} too large for dip depth {ratio:.3e}"
        )));
    }
    // A slightly over-coupled estimate within noise is reported as Qi = inf.
    let qr = fitted.qr.min(fitted.qc);
    let profile = ResonanceProfile::from_loaded(fitted.f0, qr, fitted.qc)?;
    Ok(S21Fit {
        profile,
        residual_rms,
    })
}
