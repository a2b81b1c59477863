//! Small shared numeric helpers: scans, golden-section refinement,
//! least-squares lines.

use crate::system::HistoryError;

const INVPHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section minimum of a unimodal-enough function on [a, b].
pub fn golden_min(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    if b <= a {
        return (a, f(a));
    }
    let mut c = b - INVPHI * (b - a);
    let mut d = a + INVPHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a) > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INVPHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INVPHI * (b - a);
            fd = f(d);
        }
    }
    let xm = 0.5 * (a + b);
    (xm, f(xm))
}

/// Minimum over [a, b]: coarse scan seeded at `points` knots, golden-section
/// refinement around the best bracket. For fallible accessors.
pub fn scan_golden_min(
    a: f64,
    b: f64,
    points: usize,
    f: impl Fn(f64) -> Result<f64, HistoryError>,
) -> Result<f64, HistoryError> {
    if b <= a {
        return f(a);
    }
    let n = points.max(3);
    let mut best_idx = 0;
    let mut best = f64::INFINITY;
    let mut vals = Vec::with_capacity(n);
    for i in 0..n {
        let t = a + (b - a) * i as f64 / (n - 1) as f64;
        let v = f(t)?;
        vals.push(v);
        if v < best {
            best = v;
            best_idx = i;
        }
    }
    let lo = if best_idx == 0 { 0 } else { best_idx - 1 };
    let hi = (best_idx + 1).min(n - 1);
    let ta = a + (b - a) * lo as f64 / (n - 1) as f64;
    let tb = a + (b - a) * hi as f64 / (n - 1) as f64;
    let (_, refined) = golden_min(|t| f(t).unwrap_or(f64::INFINITY), ta, tb, 1e-10 * (1.0 + b - a));
    Ok(best.min(refined))
}

/// Largest x in [lo, hi] up to which `f` keeps increasing (bisection on the
/// increase test).
pub fn bisect_increase_edge(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let increasing_at = |x: f64| {
        let eps = 1e-7 * x.max(1e-7);
        f(x + eps) >= f(x)
    };
    let (mut lo, mut hi) = (lo, hi);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if increasing_at(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 * hi.max(1.0) {
            break;
        }
    }
    lo
}

/// Least-squares slope and intercept of y over x, with R².
pub fn fit_line(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 && sxx > 0.0 {
        (sxy * sxy) / (sxx * syy)
    } else {
        1.0
    };
    (slope, intercept, r2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_finds_parabola_minimum() {
        let (x, v) = golden_min(|x| (x - 2.5) * (x - 2.5) + 1.0, 0.0, 10.0, 1e-10);
        assert!((x - 2.5).abs() < 1e-6);
        assert!((v - 1.0).abs() < 1e-10);
    }

    #[test]
    fn line_fit_recovers_slope() {
        let xs: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 - 2.0 * x).collect();
        let (slope, intercept, r2) = fit_line(&xs, &ys);
        assert!((slope + 2.0).abs() < 1e-12);
        assert!((intercept - 3.0).abs() < 1e-12);
        assert!(r2 > 0.999999);
    }
}
