//! Small dense least-squares helpers shared by the curve fits.

/// Outcome of a Levenberg-Marquardt minimisation.
#[derive(Debug, Clone)]
pub(crate) struct LmSolution {
    pub params: Vec<f64>,
    /// Sum of squared residuals at `params`.
    pub cost: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LmOptions {
    pub max_iterations: usize,
    /// Relative change in cost below which the iteration stops.
    pub cost_tolerance: f64,
    /// Relative change in every parameter below which the iteration stops.
    pub step_tolerance: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            cost_tolerance: 1e-15,
            step_tolerance: 1e-13,
        }
    }
}

fn cost_of(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Minimise `sum(residuals(p)^2)` starting at `x0`.
///
/// `scale` gives a typical magnitude for each parameter; it sets the
/// forward-difference step for the numerical Jacobian.
pub(crate) fn levenberg_marquardt<F>(
    residuals: F,
    x0: &[f64],
    scale: &[f64],
    opts: LmOptions,
) -> Option<LmSolution>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut r = residuals(&x)?;
    let m = r.len();
    if m < n {
        return None;
    }
    let mut cost = cost_of(&r);
    let mut lambda = 1e-3;
    let mut converged = false;

    for _ in 0..opts.max_iterations {
        // Jacobian, column by column.
        let mut jac = vec![0.0; m * n];
        for k in 0..n {
            let h = 1e-7 * scale[k].abs().max(x[k].abs() * 1e-3).max(f64::MIN_POSITIVE);
            let mut xp = x.clone();
            xp[k] += h;
            let rp = residuals(&xp)?;
            for i in 0..m {
                jac[i * n + k] = (rp[i] - r[i]) / h;
            }
        }
        let mut jtj = vec![0.0; n * n];
        let mut jtr = vec![0.0; n];
        for i in 0..m {
            let row = &jac[i * n..(i + 1) * n];
            for a in 0..n {
                jtr[a] += row[a] * r[i];
                for b in 0..n {
                    jtj[a * n + b] += row[a] * row[b];
                }
            }
        }

        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for k in 0..n {
                a[k * n + k] += lambda * jtj[k * n + k].max(1e-300);
            }
            let neg: Vec<f64> = jtr.iter().map(|v| -v).collect();
            let Some(step) = solve_dense(&a, &neg, n) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = x.iter().zip(&step).map(|(a, b)| a + b).collect();
            match residuals(&trial) {
                Some(rt) => {
                    let ct = cost_of(&rt);
                    if ct.is_finite() && ct <= cost {
                        let small_step = step
                            .iter()
                            .zip(&x)
                            .zip(scale)
                            .all(|((s, xv), sc)| s.abs() <= opts.step_tolerance * xv.abs().max(sc.abs()));
                        let small_cost = cost - ct <= opts.cost_tolerance * cost.max(1e-300);
                        x = trial;
                        r = rt;
                        cost = ct;
                        lambda = (lambda / 10.0).max(1e-12);
                        improved = true;
                        if small_step || small_cost {
                            converged = true;
                        }
                        break;
                    }
                    lambda *= 10.0;
                }
                None => lambda *= 10.0,
            }
        }
        if !improved {
            // No downhill step exists at any damping: a local minimum.
            converged = true;
        }
        if converged {
            break;
        }
    }
    Some(LmSolution {
        params: x,
        cost,
        converged,
    })
}

/// Solve the dense `n x n` system `a x = b` by Gaussian elimination with
/// partial pivoting. Returns `None` for a singular matrix.
pub(crate) fn solve_dense(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut m = a.to_vec();
    let mut rhs = b.to_vec();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs()))?;
        if m[pivot * n + col].abs() < 1e-300 {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                m.swap(col * n + k, pivot * n + k);
            }
            rhs.swap(col, pivot);
        }
        for row in col + 1..n {
            let f = m[row * n + col] / m[col * n + col];
            if f != 0.0 {
                for k in col..n {
                    m[row * n + k] -= f * m[col * n + k];
                }
                rhs[row] -= f * rhs[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = rhs[row];
        for k in row + 1..n {
            acc -= m[row * n + k] * x[k];
        }
        x[row] = acc / m[row * n + row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Golden-section search for the minimum of a unimodal `f` on `[lo, hi]`.
pub(crate) fn golden_section<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - g * (hi - lo);
    let mut d = lo + g * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    while (hi - lo).abs() > tol {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - g * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + g * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}

/// Bisection for a root of `f` bracketed by `[lo, hi]`; `f(lo)` and
/// `f(hi)` must have opposite signs (or one of them be zero).
pub(crate) fn bisect<F: FnMut(f64) -> f64>(mut f: F, mut lo: f64, mut hi: f64, x_tol: f64) -> f64 {
    let mut flo = f(lo);
    if flo == 0.0 {
        return lo;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (hi - lo).abs() <= x_tol {
            return mid;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        let a = [2.0, 1.0, 1.0, 3.0];
        let x = solve_dense(&a, &[3.0, 5.0], 2).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-12);
        assert!((x[1] - 1.4).abs() < 1e-12);
        assert!(solve_dense(&[1.0, 2.0, 2.0, 4.0], &[1.0, 1.0], 2).is_none());
    }

    #[test]
    fn lm_recovers_exponential() {
        let xs: Vec<f64> = (0..30).map(|i| i as f64 * 0.1).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.5 * (-1.3 * x).exp()).collect();
        let sol = levenberg_marquardt(
            |p| Some(xs.iter().zip(&ys).map(|(x, y)| p[0] * (-p[1] * x).exp() - y).collect()),
            &[1.0, 0.5],
            &[1.0, 1.0],
            LmOptions::default(),
        )
        .unwrap();
        assert!((sol.params[0] - 2.5).abs() < 1e-8);
        assert!((sol.params[1] - 1.3).abs() < 1e-8);
    }

    #[test]
    fn golden_and_bisect() {
        let m = golden_section(|x| (x - 0.3).powi(2), 0.0, 1.0, 1e-10);
        assert!((m - 0.3).abs() < 1e-8);
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-14);
        assert!((r - 2f64.sqrt()).abs() < 1e-12);
    }
}
