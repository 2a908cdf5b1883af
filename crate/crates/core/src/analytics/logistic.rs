//! Least-squares fit of `f(x) = 1 / (1 + exp(-k (x - x0)))`.
//!
//! A coarse grid over `(k, x0)` seeds a damped Gauss-Newton refinement that
//! only accepts improving steps, so the result never does worse than the
//! best grid point.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fits whose targets span less than this are flagged degenerate.
pub const DEGENERATE_RANGE: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub k: f64,
    pub x0: f64,
    /// Sum of squared errors.
    pub residual: f64,
    /// No crossing observed; `k` is reported as 0.
    pub degenerate: bool,
}

pub fn logistic(k: f64, x0: f64, x: f64) -> f64 {
    let u = -k * (x - x0);
    if u >= 0.0 {
        let e = (-u).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + u.exp())
    }
}

pub fn sse(k: f64, x0: f64, xs: &[f64], ys: &[f64]) -> f64 {
    xs.iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = logistic(k, x0, *x) - y;
            r * r
        })
        .sum()
}

fn coarse_grid(xs: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (lo, hi) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let span = (hi - lo).max(1e-9);
    let mut ks = Vec::new();
    // Log-spaced magnitudes scaled to the data span, both signs.
    for i in 0..48 {
        let m = 10f64.powf(-1.5 + 4.5 * i as f64 / 47.0) / span;
        ks.push(m);
        ks.push(-m);
    }
    let x0s = (0..=60)
        .map(|i| lo - 0.25 * span + 1.5 * span * i as f64 / 60.0)
        .collect();
    (ks, x0s)
}

/// Gauss-Newton with Levenberg damping from `(k, x0)`.
fn refine(xs: &[f64], ys: &[f64], mut k: f64, mut x0: f64) -> (f64, f64, f64) {
    let mut cost = sse(k, x0, xs, ys);
    let mut damping = 1e-3;
    for _ in 0..500 {
        // J^T J and J^T r for residuals r = f - y.
        let (mut a, mut b, mut c, mut gk, mut gx) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (x, y) in xs.iter().zip(ys) {
            let f = logistic(k, x0, *x);
            let d = f * (1.0 - f);
            let (jk, jx) = (d * (x - x0), -d * k);
            let r = f - y;
            a += jk * jk;
            b += jk * jx;
            c += jx * jx;
            gk += jk * r;
            gx += jx * r;
        }
        let mut improved = false;
        while damping < 1e12 {
            let (aa, cc) = (a + damping * a.max(1e-12), c + damping * c.max(1e-12));
            let det = aa * cc - b * b;
            if det.abs() < 1e-300 {
                damping *= 10.0;
                continue;
            }
            let dk = -(cc * gk - b * gx) / det;
            let dx = -(aa * gx - b * gk) / det;
            let (nk, nx) = (k + dk, x0 + dx);
            let nc = sse(nk, nx, xs, ys);
            if nc.is_finite() && nc < cost {
                let small = dk.abs() <= 1e-13 * (1.0 + k.abs()) && dx.abs() <= 1e-13 * (1.0 + x0.abs());
                k = nk;
                x0 = nx;
                cost = nc;
                damping = (damping * 0.3).max(1e-12);
                improved = !small;
                break;
            }
            damping *= 10.0;
        }
        if !improved {
            break;
        }
    }
    polish(xs, ys, k, x0, cost)
}

/// Undamped Gauss-Newton steps onto the stationary point. Near the optimum
/// the cost is flat to rounding while the gradient is not, so steps are
/// accepted unless they raise the cost beyond rounding.
fn polish(xs: &[f64], ys: &[f64], mut k: f64, mut x0: f64, mut cost: f64) -> (f64, f64, f64) {
    for _ in 0..20 {
        let (mut a, mut b, mut c, mut gk, mut gx) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (x, y) in xs.iter().zip(ys) {
            let f = logistic(k, x0, *x);
            let d = f * (1.0 - f);
            let (jk, jx) = (d * (x - x0), -d * k);
            let r = f - y;
            a += jk * jk;
            b += jk * jx;
            c += jx * jx;
            gk += jk * r;
            gx += jx * r;
        }
        let det = a * c - b * b;
        if !(det.abs() > 1e-300) {
            break;
        }
        let dk = -(c * gk - b * gx) / det;
        let dx = -(a * gx - b * gk) / det;
        let nc = sse(k + dk, x0 + dx, xs, ys);
        if !(nc <= cost * (1.0 + 1e-12) + 1e-300) {
            break;
        }
        k += dk;
        x0 += dx;
        cost = nc.min(cost);
        if dk.abs() <= 1e-15 * (1.0 + k.abs()) && dx.abs() <= 1e-15 * (1.0 + x0.abs()) {
            break;
        }
    }
    (k, x0, sse(k, x0, xs, ys))
}

/// Fits the logistic curve to `(xs, ys)`; needs at least four points.
pub fn fit_logistic_points(xs: &[f64], ys: &[f64]) -> Result<LogisticFit> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch {
            expected: xs.len(),
            found: ys.len(),
        });
    }
    if xs.len() < 4 {
        return Err(Error::InvalidConfig("a logistic fit needs at least 4 points".into()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("fit_logistic"));
    }
    let (ylo, yhi) = ys
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    if yhi - ylo < DEGENERATE_RANGE {
        return Ok(LogisticFit {
            k: 0.0,
            x0: 0.0,
            residual: sse(0.0, 0.0, xs, ys),
            degenerate: true,
        });
    }
    let (ks, x0s) = coarse_grid(xs);
    let mut seeds: Vec<(f64, f64, f64)> = Vec::with_capacity(ks.len() * x0s.len());
    for k in &ks {
        for x0 in &x0s {
            seeds.push((sse(*k, *x0, xs, ys), *k, *x0));
        }
    }
    seeds.sort_by(|p, q| p.0.total_cmp(&q.0));
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for (_, k, x0) in seeds.iter().take(4) {
        let (k, x0, c) = refine(xs, ys, *k, *x0);
        if c < best.0 {
            best = (c, k, x0);
        }
    }
    Ok(LogisticFit {
        k: best.1,
        x0: best.2,
        residual: best.0,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_recovery() {
        let xs: Vec<f64> = (-3..=3).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|x| logistic(1.0, 0.0, *x)).collect();
        let f = fit_logistic_points(&xs, &ys).unwrap();
        assert!((f.k - 1.0).abs() < 1e-6 && f.x0.abs() < 1e-6, "{f:?}");
        assert!(f.residual < 1e-20);
    }

    #[test]
    fn decreasing_curve_gets_negative_k() {
        let xs: Vec<f64> = (0..20).map(|i| f64::from(i) * 0.2).collect();
        let ys: Vec<f64> = xs.iter().map(|x| logistic(-3.0, 1.7, *x)).collect();
        let f = fit_logistic_points(&xs, &ys).unwrap();
        assert!((f.k + 3.0).abs() < 1e-6 && (f.x0 - 1.7).abs() < 1e-6, "{f:?}");
    }

    #[test]
    fn flat_curve_is_degenerate() {
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0];
        let f = fit_logistic_points(&xs, &[0.5; 5]).unwrap();
        assert!(f.degenerate);
        assert_eq!(f.k, 0.0);
    }

    #[test]
    fn too_few_points() {
        assert!(fit_logistic_points(&[0.0, 1.0, 2.0], &[0.0, 0.5, 1.0]).is_err());
    }

    #[test]
    fn logistic_is_stable_far_out() {
        assert_eq!(logistic(1.0, 0.0, 1000.0), 1.0);
        assert_eq!(logistic(1.0, 0.0, -1000.0), 0.0);
    }
}
