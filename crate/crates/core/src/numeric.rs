//! Scalar root finding and minimization shared by the solvers.

use crate::error::{Error, Result};

/// Inverse golden ratio, (sqrt(5) - 1) / 2.
const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Brent's method for a root of `f` in `[a, b]`, which must bracket a sign change.
pub fn brent_root<F>(mut f: F, mut a: f64, mut b: f64, xtol: f64, max_iter: usize) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() || !fa.is_finite() || !fb.is_finite() {
        return Err(Error::NoBracket {
            what: "endpoints do not bracket a sign change".into(),
            lo: a,
            hi: b,
        });
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b);
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        best_residual: fb.abs(),
    })
}

/// Scans `[lo, hi]` in `steps` equal intervals and returns every sub-interval
/// whose endpoints have opposite signs of `f`. Non-finite samples break brackets.
pub fn scan_brackets<F>(mut f: F, lo: f64, hi: f64, steps: usize) -> Vec<(f64, f64)>
where
    F: FnMut(f64) -> f64,
{
    let mut out = Vec::new();
    let h = (hi - lo) / steps as f64;
    let mut x0 = lo;
    let mut f0 = f(x0);
    for k in 1..=steps {
        let x1 = if k == steps { hi } else { lo + h * k as f64 };
        let f1 = f(x1);
        if f0.is_finite() && f1.is_finite() && (f0 == 0.0 || f0.signum() != f1.signum()) {
            out.push((x0, x1));
        }
        x0 = x1;
        f0 = f1;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minimum {
    pub x: f64,
    pub value: f64,
    /// The minimizer landed on (or next to) an end of the search interval.
    pub at_edge: bool,
}

/// Golden-section search for the minimum of a unimodal `f` on `[a, b]`.
pub fn golden_section<F>(mut f: F, mut a: f64, mut b: f64, xtol: f64) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > xtol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Coarse grid scan followed by golden-section refinement around the best sample.
/// Samples where `f` is not finite are skipped.
pub fn scan_then_golden<F>(mut f: F, lo: f64, hi: f64, step: f64, xtol: f64) -> Result<Minimum>
where
    F: FnMut(f64) -> f64,
{
    if !(hi > lo) || !(step > 0.0) {
        return Err(Error::Argument(format!(
            "invalid search interval [{lo}, {hi}] with step {step}"
        )));
    }
    let n = ((hi - lo) / step).ceil() as usize;
    let xs: Vec<f64> = (0..=n).map(|k| (lo + step * k as f64).min(hi)).collect();
    let mut best: Option<(usize, f64)> = None;
    let values: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    for (k, &v) in values.iter().enumerate() {
        if v.is_finite() && best.is_none_or(|(_, bv)| v < bv) {
            best = Some((k, v));
        }
    }
    let (k, _) = best.ok_or_else(|| {
        Error::Degenerate(format!("objective not finite anywhere in [{lo}, {hi}]"))
    })?;
    let at_edge = k == 0 || k == xs.len() - 1;
    let a = xs[k.saturating_sub(1)];
    let b = xs[(k + 1).min(xs.len() - 1)];
    let (x, value) = golden_section(&mut f, a, b, xtol);
    // the refined point can only improve on the grid sample
    let (x, value) = if value <= values[k] {
        (x, value)
    } else {
        (xs[k], values[k])
    };
    Ok(Minimum { x, value, at_edge })
}

/// Trapezoidal integral of samples `y` on abscissae `x`.
pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xw, yw)| 0.5 * (xw[1] - xw[0]) * (yw[0] + yw[1]))
        .sum()
}
