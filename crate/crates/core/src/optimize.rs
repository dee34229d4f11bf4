//! Derivative-free minimization on intervals and rectangles: a coarse grid
//! scan followed by golden-section refinement.
//!
//! All routines minimize. Ties are broken toward the smaller coordinate, and
//! the second coordinate (`t`) takes precedence over the first (`a`) when
//! scanning a rectangle, so a constant objective returns the lower-left corner.

use serde::{Deserialize, Serialize};

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Grid and refinement settings for [`minimize_rectangle`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub grid_a: usize,
    pub grid_t: usize,
    /// Argument tolerance of the golden-section refinement.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            grid_a: 41,
            grid_t: 41,
            tol: 1e-6,
            max_sweeps: 50,
        }
    }
}

/// A point of a bounded 2-D search and its objective value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchPoint {
    pub a: f64,
    pub t: f64,
    pub value: f64,
}

/// `n` evenly spaced points on `[lo, hi]` (just `lo` when the interval is
/// degenerate or `n < 2`).
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n < 2 || hi <= lo {
        return vec![lo];
    }
    let step = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|i| if i == n - 1 { hi } else { lo + step * i as f64 })
        .collect()
}

/// Golden-section search on `[lo, hi]`, returning the best point seen.
///
/// The endpoints are always evaluated so boundary minima are returned
/// exactly. `incumbent` is only replaced by a strictly better point.
pub fn golden_section<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    tol: f64,
    incumbent: (f64, f64),
) -> (f64, f64) {
    let mut best = incumbent;
    let consider = |x: f64, fx: f64, best: &mut (f64, f64)| {
        if fx < best.1 || (fx == best.1 && x < best.0) {
            *best = (x, fx);
        }
    };
    if hi <= lo {
        let flo = f(lo);
        consider(lo, flo, &mut best);
        return best;
    }
    let flo = f(lo);
    consider(lo, flo, &mut best);
    let fhi = f(hi);
    consider(hi, fhi, &mut best);

    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    consider(c, fc, &mut best);
    consider(d, fd, &mut best);
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
            consider(c, fc, &mut best);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
            consider(d, fd, &mut best);
        }
    }
    best
}

/// Grid scan of `n` points followed by golden-section refinement within one
/// grid spacing of the best grid point.
pub fn minimize_interval<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, n: usize, tol: f64) -> (f64, f64) {
    let grid = linspace(lo, hi, n);
    let mut best = (grid[0], f(grid[0]));
    for &x in &grid[1..] {
        let fx = f(x);
        if fx < best.1 {
            best = (x, fx);
        }
    }
    if grid.len() < 2 {
        return best;
    }
    let h = grid[1] - grid[0];
    let (a, b) = ((best.0 - h).max(lo), (best.0 + h).min(hi));
    golden_section(f, a, b, tol, best)
}

/// Grid-then-coordinate-golden minimization over `[a_lo, a_hi] × [t_lo, t_hi]`.
///
/// Returns `Err((a, t, value))` at the first non-finite grid value.
pub fn minimize_rectangle<F: FnMut(f64, f64) -> f64>(
    mut f: F,
    (a_lo, a_hi): (f64, f64),
    (t_lo, t_hi): (f64, f64),
    cfg: &SearchConfig,
) -> Result<SearchPoint, (f64, f64, f64)> {
    let a_grid = linspace(a_lo, a_hi, cfg.grid_a);
    let t_grid = linspace(t_lo, t_hi, cfg.grid_t);
    let mut best: Option<SearchPoint> = None;
    for &t in &t_grid {
        for &a in &a_grid {
            let value = f(a, t);
            if !value.is_finite() {
                return Err((a, t, value));
            }
            if best.is_none_or(|b| value < b.value) {
                best = Some(SearchPoint { a, t, value });
            }
        }
    }
    let mut best = best.expect("grid is never empty");
    let ha = if a_grid.len() > 1 { a_grid[1] - a_grid[0] } else { 0.0 };
    let ht = if t_grid.len() > 1 { t_grid[1] - t_grid[0] } else { 0.0 };
    refine_coordinates(&mut f, &mut best, (a_lo, a_hi), (t_lo, t_hi), (ha, ht), cfg);
    Ok(best)
}

/// Coordinate-wise golden-section polishing of `best` inside brackets of
/// half-width `h` around the current point.
pub fn refine_coordinates<F: FnMut(f64, f64) -> f64>(
    f: &mut F,
    best: &mut SearchPoint,
    (a_lo, a_hi): (f64, f64),
    (t_lo, t_hi): (f64, f64),
    (ha, ht): (f64, f64),
    cfg: &SearchConfig,
) {
    for _ in 0..cfg.max_sweeps {
        let start = *best;
        if ha > 0.0 {
            let t = best.t;
            let (a, v) = golden_section(
                |a| f(a, t),
                (best.a - ha).max(a_lo),
                (best.a + ha).min(a_hi),
                cfg.tol,
                (best.a, best.value),
            );
            best.a = a;
            best.value = v;
        }
        if ht > 0.0 {
            let a = best.a;
            let (t, v) = golden_section(
                |t| f(a, t),
                (best.t - ht).max(t_lo),
                (best.t + ht).min(t_hi),
                cfg.tol,
                (best.t, best.value),
            );
            best.t = t;
            best.value = v;
        }
        if (best.a - start.a).abs() <= cfg.tol && (best.t - start.t).abs() <= cfg.tol {
            break;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_finds_interior_and_boundary_minima() {
        let (x, fx) = golden_section(|x| (x - 0.3).powi(2), 0.0, 1.0, 1e-9, (f64::NAN, f64::INFINITY));
        assert!((x - 0.3).abs() < 1e-8 && fx < 1e-15);
        let (x, _) = golden_section(|x| x, 2.0, 5.0, 1e-9, (f64::NAN, f64::INFINITY));
        assert_eq!(x, 2.0);
        let (x, _) = golden_section(|x| -x, 2.0, 5.0, 1e-9, (f64::NAN, f64::INFINITY));
        assert_eq!(x, 5.0);
    }

    #[test]
    fn constant_objective_returns_lower_corner() {
        let p = minimize_rectangle(|_, _| 1.0, (0.0, 5.0), (2.0, 12.0), &SearchConfig::default()).unwrap();
        assert_eq!((p.a, p.t), (0.0, 2.0));
    }

    #[test]
    fn rectangle_quadratic() {
        let f = |a: f64, t: f64| (a - 1.234).powi(2) + 2.0 * (t - 3.21).powi(2) + 0.5 * (a - 1.234) * (t - 3.21);
        let p = minimize_rectangle(f, (0.0, 5.0), (2.0, 12.0), &SearchConfig::default()).unwrap();
        assert!((p.a - 1.234).abs() < 1e-5 && (p.t - 3.21).abs() < 1e-5, "{p:?}");
    }

    #[test]
    fn non_finite_reported() {
        let err = minimize_rectangle(|a, _| if a > 1.0 { f64::NAN } else { 0.0 }, (0.0, 2.0), (1.0, 2.0), &SearchConfig::default())
            .unwrap_err();
        assert!(err.0 > 1.0);
    }

    #[test]
    fn interval_minimizer() {
        let (x, _) = minimize_interval(|x| (x - 7.77).abs(), 0.0, 10.0, 201, 1e-9);
        assert!((x - 7.77).abs() < 1e-8);
    }
}
