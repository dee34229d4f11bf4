//! Probability kernels and discounted time integrals.
//!
//! Everything here is a pure function of its arguments. Poisson masses are
//! evaluated in log-space; birth–death (Skellam) transition rows are built by
//! convolving two truncated Poisson vectors and are never renormalized, so the
//! missing mass is available to the caller for error bounds.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{domain, Result};

/// Default mass allowed to fall outside a truncated kernel row.
pub const DEFAULT_KERNEL_EPS: f64 = 1e-12;

fn check_mean(mean: f64) -> Result<()> {
    if mean.is_finite() && mean >= 0.0 {
        Ok(())
    } else {
        Err(domain("poisson mean", mean))
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(domain("truncation eps", eps))
    }
}

/// `ln P(N = k)` for `N ~ Poisson(mean)`; `-inf` for impossible outcomes.
pub fn poisson_ln_pmf(k: u64, mean: f64) -> f64 {
    if mean == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    let k = k as f64;
    -mean + k * mean.ln() - ln_gamma(k + 1.0)
}

/// Poisson probability mass `e^{-mean} mean^k / k!`.
pub fn poisson_pmf(k: u64, mean: f64) -> Result<f64> {
    check_mean(mean)?;
    Ok(poisson_ln_pmf(k, mean).exp())
}

/// Smallest `K` such that `P(N > K) < eps` for `N ~ Poisson(mean)`.
pub fn poisson_cutoff(mean: f64, eps: f64) -> Result<u64> {
    check_mean(mean)?;
    check_eps(eps)?;
    let (_, hi) = upper_cutoff(mean, eps);
    Ok(hi)
}

/// Returns the pmf values on `0..=top` and the smallest `K` with upper tail
/// below `eps`.
fn upper_cutoff(mean: f64, eps: f64) -> (Vec<f64>, u64) {
    if mean == 0.0 {
        return (vec![1.0], 0);
    }
    let pmf = pmf_until_negligible(mean, eps * 1e-6);
    // Bound on the mass beyond the last computed index: geometric with the
    // (decreasing) ratio mean / (k + 1).
    let last = pmf.len() - 1;
    let ratio = mean / (last as f64 + 2.0);
    let mut tail = pmf[last] * ratio / (1.0 - ratio);
    let mut k = last;
    // tail currently holds P(N > k)
    while k > 0 && tail + pmf[k] < eps {
        tail += pmf[k];
        k -= 1;
    }
    (pmf, k as u64)
}

/// Pmf on `0..=top`, computed from the mode outward by the two-term
/// recurrence, where `top` is past the mode and `pmf[top] < floor`.
fn pmf_until_negligible(mean: f64, floor: f64) -> Vec<f64> {
    let mode = mean.floor() as usize;
    let mut pmf = vec![0.0; mode + 1];
    pmf[mode] = poisson_ln_pmf(mode as u64, mean).exp();
    for k in (0..mode).rev() {
        pmf[k] = pmf[k + 1] * (k as f64 + 1.0) / mean;
    }
    let mut k = mode;
    loop {
        let next = pmf[k] * mean / (k as f64 + 1.0);
        pmf.push(next);
        k += 1;
        if next < floor && mean / (k as f64 + 1.0) < 0.5 {
            break;
        }
    }
    pmf
}

/// Truncated Poisson vector: `(lo, probs)` with `probs[i] = P(N = lo + i)`
/// and total omitted mass (both tails) below `eps`.
fn poisson_window(mean: f64, eps: f64) -> (u64, Vec<f64>) {
    if mean == 0.0 {
        return (0, vec![1.0]);
    }
    let (pmf, hi) = upper_cutoff(mean, eps / 2.0);
    let hi = hi as usize;
    let mut lo = 0usize;
    let mut left = 0.0;
    while lo < hi && left + pmf[lo] < eps / 2.0 {
        left += pmf[lo];
        lo += 1;
    }
    (lo as u64, pmf[lo..=hi].to_vec())
}

/// Probability that the net change of a birth–death count over an interval
/// equals `x_prime - x`, with `arrival_mass` expected births and
/// `departure_mass` expected deaths (difference of two independent Poisson
/// counts). The double sum over the common count is evaluated from its mode
/// outward; the omitted tail is below `eps`.
pub fn birth_death_kernel(
    x: i64,
    x_prime: i64,
    arrival_mass: f64,
    departure_mass: f64,
    eps: f64,
) -> Result<f64> {
    check_mean(arrival_mass)?;
    check_mean(departure_mass)?;
    check_eps(eps)?;
    let d = x_prime - x;
    // Larger count carries the offset: (big, small) with big = small + |d|.
    let (big_mean, small_mean) = if d >= 0 {
        (arrival_mass, departure_mass)
    } else {
        (departure_mass, arrival_mass)
    };
    let off = d.unsigned_abs();
    let log_term = |j: u64| poisson_ln_pmf(j + off, big_mean) + poisson_ln_pmf(j, small_mean);

    if small_mean == 0.0 {
        return Ok(log_term(0).exp());
    }
    if big_mean == 0.0 {
        // only j = 0 survives, and only without offset
        return Ok(if off == 0 { (-small_mean).exp() } else { 0.0 });
    }
    // term ratio t_{j+1}/t_j = AM / ((j + off + 1)(j + 1)); mode where it crosses 1
    let prod = big_mean * small_mean;
    let offf = off as f64;
    let mode = ((-(offf + 2.0) + (offf * offf + 4.0 * prod).sqrt()) / 2.0)
        .ceil()
        .max(0.0) as u64;
    let ratio = |j: u64| prod / ((j as f64 + offf + 1.0) * (j as f64 + 1.0));

    let peak = log_term(mode);
    let mut scaled = 1.0;
    let budget = eps / 4.0 * (-peak).exp();

    // upward
    let mut j = mode;
    let mut t = 1.0;
    loop {
        let r = ratio(j);
        t *= r;
        j += 1;
        scaled += t;
        let rn = ratio(j);
        if rn < 1.0 && t * rn / (1.0 - rn) < budget {
            break;
        }
    }
    // downward
    let mut j = mode;
    let mut t = 1.0;
    while j > 0 {
        let r = ratio(j - 1);
        t /= r;
        j -= 1;
        scaled += t;
        if j > 0 {
            let back = 1.0 / ratio(j - 1);
            if back < 1.0 && t * back / (1.0 - back) < budget {
                break;
            }
        }
    }
    Ok(scaled * peak.exp())
}

/// Truncated transition row out of a single source state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelRow {
    pub source_state: i64,
    /// Destination of `probs[0]`; the support is contiguous.
    pub first: i64,
    pub probs: Vec<f64>,
    pub retained_mass: f64,
    pub truncation_eps: f64,
}

impl KernelRow {
    pub fn last(&self) -> i64 {
        self.first + self.probs.len() as i64 - 1
    }

    pub fn prob(&self, dest: i64) -> f64 {
        let i = dest - self.first;
        if i < 0 {
            return 0.0;
        }
        self.probs.get(i as usize).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.probs
            .iter()
            .enumerate()
            .map(move |(i, &p)| (self.first + i as i64, p))
    }

    pub fn missing_mass(&self) -> f64 {
        (1.0 - self.retained_mass).max(0.0)
    }

    /// Same row moved to a different source state.
    pub fn shifted_to(&self, source_state: i64) -> KernelRow {
        KernelRow {
            source_state,
            first: self.first + (source_state - self.source_state),
            ..self.clone()
        }
    }

    /// `Σ q(x') f(x')` over the retained support.
    pub fn expect(&self, mut f: impl FnMut(i64) -> f64) -> f64 {
        self.iter().map(|(s, p)| p * f(s)).sum()
    }
}

/// Birth–death transition row from `x`, keeping at least `1 - eps` of the mass.
pub fn kernel_row(x: i64, arrival_mass: f64, departure_mass: f64, eps: f64) -> Result<KernelRow> {
    check_mean(arrival_mass)?;
    check_mean(departure_mass)?;
    check_eps(eps)?;
    let (lo_a, pa) = poisson_window(arrival_mass, eps / 2.0);
    let (lo_d, pd) = poisson_window(departure_mass, eps / 2.0);
    let first = x + lo_a as i64 - (lo_d + pd.len() as u64 - 1) as i64;
    let mut probs = vec![0.0; pa.len() + pd.len() - 1];
    // net = (lo_a + i) - (lo_d + j); index = i + (len_d - 1 - j)
    let top = pd.len() - 1;
    for (i, &a) in pa.iter().enumerate() {
        for (j, &d) in pd.iter().enumerate() {
            probs[i + top - j] += a * d;
        }
    }
    let retained_mass = probs.iter().sum();
    Ok(KernelRow {
        source_state: x,
        first,
        probs,
        retained_mass,
        truncation_eps: eps,
    })
}

/// Poisson row `k -> P(N = k)` over `0..`, truncated so the omitted upper
/// tail is below `eps`.
pub fn poisson_row(mean: f64, eps: f64) -> Result<KernelRow> {
    check_mean(mean)?;
    check_eps(eps)?;
    let (pmf, hi) = upper_cutoff(mean, eps);
    let probs = pmf[..=hi as usize].to_vec();
    let retained_mass = probs.iter().sum();
    Ok(KernelRow {
        source_state: 0,
        first: 0,
        probs,
        retained_mass,
        truncation_eps: eps,
    })
}

/// `∫₀ᵀ tⁱ βᵗ dt` for `i = 0, 1, 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscountIntegrals {
    pub dk0: f64,
    pub dk1: f64,
    pub dk2: f64,
}

impl DiscountIntegrals {
    /// Integral of `βᵗ (c0 + c1 t + c2 t²)` over the interval.
    pub fn quadratic(&self, c0: f64, c1: f64, c2: f64) -> f64 {
        c0 * self.dk0 + c1 * self.dk1 + c2 * self.dk2
    }

    pub fn sub(&self, other: &DiscountIntegrals) -> DiscountIntegrals {
        DiscountIntegrals {
            dk0: self.dk0 - other.dk0,
            dk1: self.dk1 - other.dk1,
            dk2: self.dk2 - other.dk2,
        }
    }
}

/// Closed-form discounted moments `∫₀ᵀ tⁱ βᵗ dt`.
///
/// Uses the antiderivatives `K₀ = βᵗ/L`, `K₁ = tβᵗ/L − K₀/L`,
/// `K₂ = t²βᵗ/L − 2K₁/L` with `L = ln β`, switching to the power series of
/// `e^{Lt}` when `|L T|` is small and the closed form cancels.
pub fn discount_integrals(t: f64, beta: f64) -> Result<DiscountIntegrals> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(domain("discount base", beta));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(domain("interval length", t));
    }
    let l = beta.ln();
    let lt = l * t;
    if lt.abs() < 2.0 {
        // ∫₀ᵀ tⁱ e^{Lt} dt = Σₙ Lⁿ T^{n+i+1} / (n! (n+i+1))
        let mut out = [0.0f64; 3];
        for (i, slot) in out.iter_mut().enumerate() {
            let mut coef = t.powi(i as i32 + 1); // Lⁿ T^{n+i+1} / n!
            let mut acc = 0.0;
            for n in 0..80 {
                let term = coef / (n + i + 1) as f64;
                acc += term;
                if term.abs() <= 1e-18 * acc.abs() {
                    break;
                }
                coef *= lt / (n + 1) as f64;
            }
            *slot = acc;
        }
        return Ok(DiscountIntegrals {
            dk0: out[0],
            dk1: out[1],
            dk2: out[2],
        });
    }
    let bt = lt.exp();
    let dk0 = lt.exp_m1() / l;
    let dk1 = t * bt / l - dk0 / l;
    let dk2 = t * t * bt / l - 2.0 * dk1 / l;
    Ok(DiscountIntegrals { dk0, dk1, dk2 })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Adaptive Simpson quadrature, used as an independent oracle.
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let lm = 0.5 * (a + m);
            let rm = 0.5 * (m + b);
            let flm = f(lm);
            let frm = f(rm);
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                return left + right + (left + right - whole) / 15.0;
            }
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
        let fa = f(a);
        let fb = f(b);
        let fm = f(0.5 * (a + b));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        rec(f, a, b, fa, fm, fb, whole, tol, 50)
    }

    #[test]
    fn poisson_pmf_basics() {
        assert_eq!(poisson_pmf(0, 0.0).unwrap(), 1.0);
        assert_eq!(poisson_pmf(3, 0.0).unwrap(), 0.0);
        assert!((poisson_pmf(0, 1.0).unwrap() - 0.36787944117144233).abs() < 1e-15);
        assert!(poisson_pmf(1, -1.0).is_err());
    }

    #[test]
    fn poisson_pmf_large_k_matches_product_oracle() {
        // e^{-100} Π_{k=1}^{150} (100/k), accumulated with rescaling
        let mut acc = 1.0f64;
        let mut log_scale = -100.0f64;
        for k in 1..=150 {
            acc *= 100.0 / k as f64;
            if acc > 1e100 {
                acc /= 1e100;
                log_scale += 100.0 * std::f64::consts::LN_10;
            }
        }
        let oracle = acc * log_scale.exp();
        // 40-digit reference: 6.511160468786342642e-7
        let frozen = 6.511160468786342642e-7;
        assert!(((oracle - frozen) / frozen).abs() < 1e-12);
        let got = poisson_pmf(150, 100.0).unwrap();
        assert!(((got - frozen) / frozen).abs() < 1e-12, "{got}");
    }

    #[test]
    fn pmf_never_underflows_in_range() {
        for &m in &[1e-3, 1.0, 50.0, 1000.0] {
            for &k in &[0u64, 10, 500, 9_999] {
                let p = poisson_pmf(k, m).unwrap();
                // log-space value stays finite even where exp underflows
                assert!(poisson_ln_pmf(k, m).is_finite());
                assert!(p >= 0.0);
            }
        }
        assert!(poisson_pmf(200, 150.0).unwrap() > 0.0);
    }

    fn tail_above(mean: f64, k: u64) -> f64 {
        // cumulative summation oracle, summed from the far end downward
        let top = (mean + 40.0 * (mean + 1.0).sqrt() + 60.0) as u64;
        let mut tail = 0.0;
        for j in ((k + 1)..=top).rev() {
            tail += poisson_pmf(j, mean).unwrap();
        }
        tail
    }

    #[test]
    fn cutoff_examples() {
        assert_eq!(poisson_cutoff(0.0, 1e-9).unwrap(), 0);
        for &(m, eps) in &[(4.0, 1e-9), (100.0, 1e-12), (0.3, 1e-6), (37.5, 1e-10)] {
            let k = poisson_cutoff(m, eps).unwrap();
            assert!(tail_above(m, k) < eps, "mean {m}: tail beyond {k}");
            assert!(k == 0 || tail_above(m, k - 1) >= eps, "mean {m}: {k} not minimal");
        }
        assert!(poisson_cutoff(100.0, 1e-12).unwrap() >= 100);
        assert!(poisson_cutoff(1.0, 0.0).is_err());
        assert!(poisson_cutoff(1.0, 1.0).is_err());
    }

    fn brute_double_sum(d: i64, a: f64, m: f64) -> f64 {
        // Σ_j P_A(j + d) P_M(j) with factorials built as running products
        let mut sum = 0.0;
        for j in 0..200i64 {
            let k = j + d;
            if k < 0 {
                continue;
            }
            let mut pa = (-a).exp();
            for i in 1..=k {
                pa *= a / i as f64;
            }
            let mut pm = (-m).exp();
            for i in 1..=j {
                pm *= m / i as f64;
            }
            sum += pa * pm;
        }
        sum
    }

    #[test]
    fn birth_death_examples() {
        for x in [-7, 0, 13] {
            assert_eq!(birth_death_kernel(x, x, 0.0, 0.0, 1e-9).unwrap(), 1.0);
        }
        for &a in &[0.0, 0.7, 3.0, 25.0] {
            let got = birth_death_kernel(5, 6, a, 0.0, 1e-9).unwrap();
            assert!((got - poisson_pmf(1, a).unwrap()).abs() < 1e-15);
        }
        let got = birth_death_kernel(0, 0, 3.0, 3.0, 1e-12).unwrap();
        let oracle = brute_double_sum(0, 3.0, 3.0);
        assert!((got - oracle).abs() < 1e-10);
        // e^{-6} I₀(6)
        assert!((got - 0.16665743263981657).abs() < 1e-12);
        for d in -8..=8 {
            let got = birth_death_kernel(3, 3 + d, 4.5, 2.0, 1e-12).unwrap();
            assert!((got - brute_double_sum(d, 4.5, 2.0)).abs() < 1e-12, "d={d}");
        }
    }

    #[test]
    fn kernel_matches_row() {
        let row = kernel_row(2, 10.0, 4.0, 1e-9).unwrap();
        for x in row.first..=row.last() {
            let p = birth_death_kernel(2, x, 10.0, 4.0, 1e-12).unwrap();
            assert!((p - row.prob(x)).abs() <= 1e-9, "{x}");
        }
    }

    #[test]
    fn row_examples() {
        let row = kernel_row(0, 0.0, 0.0, 1e-9).unwrap();
        assert_eq!(row.probs, vec![1.0]);
        assert_eq!(row.first, 0);
        assert_eq!(row.retained_mass, 1.0);

        let row = kernel_row(10, 10.0, 4.0, 1e-9).unwrap();
        let sum: f64 = row.probs.iter().sum();
        assert!(sum >= 1.0 - 1e-9 && sum <= 1.0 + 1e-12);
        assert!(row.first <= 10 && row.last() >= 10);

        let a = kernel_row(4, 7.5, 2.25, 1e-9).unwrap();
        let b = kernel_row(4, 2.25, 7.5, 1e-9).unwrap();
        for d in -30..=30 {
            assert!((a.prob(4 + d) - b.prob(4 - d)).abs() < 1e-15);
        }
    }

    #[test]
    fn row_moments() {
        let (a, m) = (12.0, 5.5);
        let row = kernel_row(0, a, m, 1e-12).unwrap();
        let mean = row.expect(|s| s as f64);
        let second = row.expect(|s| (s * s) as f64);
        assert!((mean - (a - m)).abs() < 1e-8);
        assert!((second - mean * mean - (a + m)).abs() < 1e-8);
    }

    #[test]
    fn discount_integral_examples() {
        let z = discount_integrals(0.0, 0.8).unwrap();
        assert_eq!((z.dk0, z.dk1, z.dk2), (0.0, 0.0, 0.0));

        let k = discount_integrals(2.0, 0.8).unwrap();
        assert!((k.dk0 - (0.8f64.powi(2) - 1.0) / 0.8f64.ln()).abs() < 1e-14);
        let frozen = [1.613311242380837923, 1.493707707069250634, 1.915428035545849557];
        for (got, want) in [k.dk0, k.dk1, k.dk2].iter().zip(frozen) {
            assert!((got - want).abs() < 1e-12);
        }
        let k = discount_integrals(12.0, 0.8).unwrap();
        for (i, got) in [k.dk0, k.dk1, k.dk2].iter().enumerate() {
            let q = simpson(&|t: f64| t.powi(i as i32) * 0.8f64.powf(t), 0.0, 12.0, 1e-13);
            assert!((got - q).abs() < 1e-10, "i={i}: {got} vs {q}");
        }
        assert!(discount_integrals(1.0, 1.0).is_err());
        assert!(discount_integrals(1.0, 0.0).is_err());
        assert!(discount_integrals(-1.0, 0.5).is_err());
    }

    #[test]
    fn discount_integrals_match_quadrature_grid() {
        for &beta in &[0.5, 0.8, 0.95, 0.99] {
            for &t in &[1e-6, 0.01, 0.3, 1.0, 3.7, 10.0, 25.0, 50.0] {
                let k = discount_integrals(t, beta).unwrap();
                for (i, got) in [k.dk0, k.dk1, k.dk2].iter().enumerate() {
                    let q = simpson(&|s: f64| s.powi(i as i32) * beta.powf(s), 0.0, t, 1e-13);
                    assert!((got - q).abs() < 1e-10, "beta={beta} t={t} i={i}");
                }
            }
        }
    }

    #[test]
    fn discount_integrals_increase() {
        let mut prev = discount_integrals(0.0, 0.9).unwrap();
        for n in 1..400 {
            let k = discount_integrals(n as f64 * 0.05, 0.9).unwrap();
            assert!(k.dk0 > prev.dk0 && k.dk1 > prev.dk1 && k.dk2 > prev.dk2);
            prev = k;
        }
    }
}
