//! Gated polling queue with a controlled server speed.
//!
//! Customers arrive as a Poisson process of rate `λ` into an outer room. At an
//! observation epoch the gate opens, the `x` customers that arrived during the
//! previous cycle move to the inner room and are served at speed `a`, and the
//! controller picks the length `T` of the next cycle. The expected waiting
//! cost of a cycle is `λT²/2 + (x² + x)/(2a)` and speed costs `ηa`.
//!
//! The cost separates into an `a`-part depending only on `x` and a `T`-part
//! independent of `x`, so the speed has the closed form
//! `a*(x) = √(x(x+1)/(2η))` and the value is `v(x) = r*(x) + W*` with a
//! scalar `W*` solving a one-dimensional fixed point. The optimal cycle length
//! is therefore the same in every state.

use serde::{Deserialize, Serialize};

use crate::engine::{ObservationMdp, StageChoice, StateWindow, ValueTable};
use crate::error::{domain, Error, Result};
use crate::kernels::{poisson_cutoff, poisson_pmf};
use crate::optimize::{golden_section, linspace, minimize_interval, minimize_rectangle, SearchConfig};

/// Grid size of the inner minimization over `T`.
pub const T_GRID: usize = 201;

/// Default upper-tail mass left out of the Poisson sums.
pub const DEFAULT_TAIL_EPS: f64 = 1e-12;

/// Per-observation cost `g(T)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ObservationCost {
    /// `g(T) = κ/T`: bounded and decreasing on `[T̲, T̄]`.
    Inverse { kappa: f64 },
    /// `g(T) = −κT`, as in the inventory model.
    Linear { kappa: f64 },
}

impl ObservationCost {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            ObservationCost::Inverse { kappa } => kappa / t,
            ObservationCost::Linear { kappa } => -kappa * t,
        }
    }

    fn kappa(&self) -> f64 {
        match *self {
            ObservationCost::Inverse { kappa } | ObservationCost::Linear { kappa } => kappa,
        }
    }
}

impl Default for ObservationCost {
    fn default() -> Self {
        ObservationCost::Inverse { kappa: 1.0 }
    }
}

/// Parameters of the gated queue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueueParams {
    /// Arrival rate.
    pub lambda: f64,
    /// Speed cost coefficient in `η(a) = ηa`.
    pub eta: f64,
    pub beta: f64,
    pub t_min: f64,
    pub t_max: f64,
    #[serde(default)]
    pub g: ObservationCost,
    /// Largest arrival count kept in the Poisson sums; derived from
    /// `tail_eps` when absent.
    #[serde(default)]
    pub n_trunc: Option<u64>,
    #[serde(default = "default_tail_eps")]
    pub tail_eps: f64,
}

fn default_tail_eps() -> f64 {
    DEFAULT_TAIL_EPS
}

impl QueueParams {
    /// λ = 1, η = 1, β = 0.8, T ∈ [1, 6], g(T) = 1/T.
    pub fn reference() -> Self {
        QueueParams {
            lambda: 1.0,
            eta: 1.0,
            beta: 0.8,
            t_min: 1.0,
            t_max: 6.0,
            g: ObservationCost::default(),
            n_trunc: None,
            tail_eps: DEFAULT_TAIL_EPS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &'static str, reason: &str| Err(Error::InvalidParam { key, reason: reason.to_string() });
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad("lambda", "must be finite and > 0");
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("eta", "must be finite and > 0");
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad("beta", "must lie in (0, 1)");
        }
        if !(self.t_min > 0.0 && self.t_min <= self.t_max && self.t_max.is_finite()) {
            return bad("t_min", "need 0 < t_min ≤ t_max < ∞");
        }
        if !(self.g.kappa() >= 0.0 && self.g.kappa().is_finite()) {
            return bad("g.kappa", "must be finite and ≥ 0");
        }
        if !(self.tail_eps > 0.0 && self.tail_eps < 1.0) {
            return bad("tail_eps", "must lie in (0, 1)");
        }
        Ok(())
    }

    /// `n_trunc`, or the Poisson cutoff of `λT̄` at `tail_eps`.
    pub fn truncation(&self) -> Result<u64> {
        match self.n_trunc {
            Some(n) => Ok(n),
            None => poisson_cutoff(self.lambda * self.t_max, self.tail_eps),
        }
    }
}

/// Speed minimizing `(x² + x)/(2a) + ηa`.
pub fn optimal_speed(x: u64, eta: f64) -> f64 {
    let x = x as f64;
    (x * (x + 1.0) / (2.0 * eta)).sqrt()
}

/// Minimal value `√(2ηx(x+1))` of the speed problem.
pub fn optimal_speed_cost(x: u64, eta: f64) -> f64 {
    let x = x as f64;
    (2.0 * eta * x * (x + 1.0)).sqrt()
}

/// Inner-room waiting plus speed cost `(x² + x)/(2a) + ηa`.
pub fn speed_cost(x: u64, a: f64, eta: f64) -> f64 {
    let xf = x as f64;
    if x == 0 {
        return eta * a;
    }
    if a <= 0.0 {
        return f64::INFINITY;
    }
    (xf * xf + xf) / (2.0 * a) + eta * a
}

/// `E[W] = λT²/2 + (x² + x)/(2a)` for one cycle.
pub fn expected_cycle_waiting_cost(x: u64, a: f64, t: f64, p: &QueueParams) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(domain("cycle length", t));
    }
    let outer = p.lambda * t * t / 2.0;
    if x == 0 {
        return Ok(outer);
    }
    if !(a > 0.0) {
        return Err(domain("server speed", a));
    }
    let xf = x as f64;
    Ok(outer + (xf * xf + xf) / (2.0 * a))
}

/// `P(N = k)` for `k = 0..=n`, `N ~ Poisson(mean)`.
fn poisson_head(mean: f64, n: u64) -> Result<Vec<f64>> {
    (0..=n).map(|k| poisson_pmf(k, mean)).collect()
}

fn check_interval(t: f64, p: &QueueParams) -> Result<()> {
    if t >= p.t_min && t <= p.t_max {
        Ok(())
    } else {
        Err(domain("observation interval", t))
    }
}

/// Precomputed `Σ_{k≤n} P(N=k) r*(k)` and retained mass at one `T`.
#[derive(Debug, Clone, Copy)]
struct EpochTerms {
    t: f64,
    fixed: f64,
    discount: f64,
    mass: f64,
}

impl EpochTerms {
    fn new(t: f64, n: u64, p: &QueueParams) -> Result<Self> {
        let pmf = poisson_head(p.lambda * t, n)?;
        let expected_r: f64 = pmf.iter().enumerate().map(|(k, q)| q * optimal_speed_cost(k as u64, p.eta)).sum();
        let mass = pmf.iter().sum();
        let discount = p.beta.powf(t);
        Ok(EpochTerms {
            t,
            fixed: p.lambda * t * t / 2.0 + p.g.eval(t) + discount * expected_r,
            discount,
            mass,
        })
    }

    fn eval(&self, w: f64) -> f64 {
        self.fixed + self.discount * self.mass * w
    }
}

/// `λT²/2 + g(T) + βᵀ(Σ_{k≤n} P(N=k) r*(k) + W·P(N ≤ n))`, `N ~ Poisson(λT)`.
pub fn epoch_objective(t: f64, w: f64, p: &QueueParams) -> Result<f64> {
    check_interval(t, p)?;
    Ok(EpochTerms::new(t, p.truncation()?, p)?.eval(w))
}

/// Fixed point of the epoch map and its minimizing interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueSolution {
    pub w_star: f64,
    pub t_star: f64,
    pub n_trunc: u64,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
}

/// One row of the closed-form solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueRow {
    pub x: u64,
    pub a_star: f64,
    pub r_star: f64,
    pub v: f64,
}

impl QueueSolution {
    pub fn rows(&self, p: &QueueParams) -> Vec<QueueRow> {
        (0..=self.n_trunc)
            .map(|x| QueueRow {
                x,
                a_star: optimal_speed(x, p.eta),
                r_star: optimal_speed_cost(x, p.eta),
                v: value(x, p, self.w_star),
            })
            .collect()
    }
}

/// `min_T` of the epoch objective at continuation offset `w`: grid over
/// [`T_GRID`] points, then golden section within one spacing.
fn minimize_epoch(grid: &[EpochTerms], w: f64, n: u64, p: &QueueParams) -> Result<(f64, f64)> {
    let mut best = (grid[0].t, grid[0].eval(w));
    for e in &grid[1..] {
        let fx = e.eval(w);
        if fx < best.1 {
            best = (e.t, fx);
        }
    }
    if grid.len() < 2 {
        return Ok(best);
    }
    let h = grid[1].t - grid[0].t;
    let mut failure = None;
    let best = golden_section(
        |t| match EpochTerms::new(t, n, p) {
            Ok(e) => e.eval(w),
            Err(err) => {
                failure.get_or_insert(err);
                f64::INFINITY
            }
        },
        (best.0 - h).max(p.t_min),
        (best.0 + h).min(p.t_max),
        1e-10,
        best,
    );
    match failure {
        Some(err) => Err(err),
        None => Ok(best),
    }
}

/// Iterates `W ← min_T epoch_objective(T, W)` from `W = 0` until successive
/// iterates differ by at most `eps`.
pub fn solve_epoch_fixed_point(p: &QueueParams, eps: f64, max_iter: usize) -> Result<QueueSolution> {
    p.validate()?;
    if !(eps > 0.0) {
        return Err(domain("fixed-point eps", eps));
    }
    let n = p.truncation()?;
    let grid = linspace(p.t_min, p.t_max, T_GRID)
        .into_iter()
        .map(|t| EpochTerms::new(t, n, p))
        .collect::<Result<Vec<_>>>()?;
    let mut w = 0.0;
    let mut history = Vec::new();
    for k in 0..max_iter {
        let (t, next) = minimize_epoch(&grid, w, n, p)?;
        let residual = (next - w).abs();
        history.push(residual);
        w = next;
        if residual <= eps {
            return Ok(QueueSolution {
                w_star: w,
                t_star: t,
                n_trunc: n,
                iterations: k + 1,
                residual_history: history,
            });
        }
    }
    Err(Error::NotConverged {
        iterations: max_iter,
        residual: history.last().copied().unwrap_or(f64::INFINITY),
        residual_history: history,
    })
}

/// `v(x) = r*(x) + W*`.
pub fn value(x: u64, p: &QueueParams, w_star: f64) -> f64 {
    optimal_speed_cost(x, p.eta) + w_star
}

/// `P(S > T̲)` where `S` is the service time of `x` customers with
/// exponential services at speed `a*(x)`: the Poisson(`a* T̲`) CDF at `x − 1`.
pub fn service_overrun_probability(x: u64, p: &QueueParams) -> Result<f64> {
    if x == 0 {
        return Ok(0.0);
    }
    let mean = optimal_speed(x, p.eta) * p.t_min;
    let head = poisson_head(mean, x - 1)?;
    Ok(head.iter().sum::<f64>().min(1.0))
}

/// The queue as a generic [`ObservationMdp`] on states `0..=n_trunc`, with
/// arbitrary continuation values.
///
/// [`stage_value`](ObservationMdp::stage_value) uses the separable two-step
/// reduction: the speed is minimized numerically for the state and the
/// interval for the continuation, so the chosen `T` cannot depend on `x`.
/// [`GatedQueueModel::joint_stage_value`] minimizes jointly for comparison.
#[derive(Debug, Clone)]
pub struct GatedQueueModel {
    pub params: QueueParams,
    n: u64,
    a_cap: f64,
    t_grid: Vec<f64>,
    grid_pmf: Vec<Vec<f64>>,
}

impl GatedQueueModel {
    pub fn new(params: QueueParams) -> Result<Self> {
        params.validate()?;
        let n = params.truncation()?;
        let t_grid = linspace(params.t_min, params.t_max, T_GRID);
        let grid_pmf = t_grid
            .iter()
            .map(|&t| poisson_head(params.lambda * t, n))
            .collect::<Result<Vec<_>>>()?;
        let a_cap = 2.0 * optimal_speed(n, params.eta) + 1.0;
        Ok(GatedQueueModel {
            params,
            n,
            a_cap,
            t_grid,
            grid_pmf,
        })
    }

    pub fn n_trunc(&self) -> u64 {
        self.n
    }

    /// Upper end of the speed search interval.
    pub fn speed_cap(&self) -> f64 {
        self.a_cap
    }

    fn interval_part_with(&self, t: f64, pmf: &[f64], v: &ValueTable) -> f64 {
        let p = &self.params;
        let cont: f64 = pmf.iter().enumerate().map(|(k, q)| q * v.clamped(k as i64)).sum();
        p.lambda * t * t / 2.0 + p.g.eval(t) + p.beta.powf(t) * cont
    }

    /// `λT²/2 + g(T) + βᵀ Σ_{k≤n} P(N=k) v(k)`.
    pub fn interval_part(&self, t: f64, v: &ValueTable) -> Result<f64> {
        let pmf = poisson_head(self.params.lambda * t, self.n)?;
        Ok(self.interval_part_with(t, &pmf, v))
    }

    fn best_interval(&self, v: &ValueTable) -> Result<(f64, f64)> {
        let mut best = (self.t_grid[0], f64::INFINITY);
        for (&t, pmf) in self.t_grid.iter().zip(&self.grid_pmf) {
            let fx = self.interval_part_with(t, pmf, v);
            if fx < best.1 {
                best = (t, fx);
            }
        }
        if self.t_grid.len() < 2 {
            return Ok(best);
        }
        let h = self.t_grid[1] - self.t_grid[0];
        let p = &self.params;
        Ok(golden_section(
            |t| self.interval_part(t, v).unwrap_or(f64::INFINITY),
            (best.0 - h).max(p.t_min),
            (best.0 + h).min(p.t_max),
            1e-10,
            best,
        ))
    }

    fn best_speed(&self, x: u64) -> (f64, f64) {
        if x == 0 {
            return (0.0, 0.0);
        }
        minimize_interval(|a| speed_cost(x, a, self.params.eta), 0.0, self.a_cap, 201, 1e-11)
    }

    /// Joint grid-plus-coordinate minimization over `(a, T)`.
    pub fn joint_stage_value(&self, x: i64, v: &ValueTable, cfg: &SearchConfig) -> Result<StageChoice> {
        let xu = self.state(x)?;
        let p = &self.params;
        // a = 0 is infinite for x > 0; start the rectangle just above it
        let a_lo = if xu == 0 { 0.0 } else { self.a_cap * 1e-6 };
        let point = minimize_rectangle(
            |a, t| speed_cost(xu, a, p.eta) + self.interval_part(t, v).unwrap_or(f64::INFINITY),
            (a_lo, self.a_cap),
            (p.t_min, p.t_max),
            cfg,
        )
        .map_err(|(a, t, val)| Error::StageOptimizer {
            state: x,
            reason: format!("objective {val} at a = {a}, T = {t}"),
        })?;
        Ok(StageChoice {
            action: point.a,
            interval: point.t,
            value: point.value,
        })
    }

    fn state(&self, x: i64) -> Result<u64> {
        if x < 0 || x as u64 > self.n {
            return Err(Error::OutsideWindow {
                state: x,
                lo: 0,
                hi: self.n as i64,
            });
        }
        Ok(x as u64)
    }
}

impl ObservationMdp for GatedQueueModel {
    fn window(&self) -> StateWindow {
        StateWindow { lo: 0, hi: self.n as i64 }
    }

    fn discount_base(&self) -> f64 {
        self.params.beta
    }

    fn min_interval(&self) -> f64 {
        self.params.t_min
    }

    fn stage_value(&self, x: i64, v: &ValueTable) -> Result<StageChoice> {
        let xu = self.state(x)?;
        let (a, ra) = self.best_speed(xu);
        let (t, rt) = self.best_interval(v)?;
        Ok(StageChoice {
            action: a,
            interval: t,
            value: ra + rt,
        })
    }

    fn stage_objective(&self, x: i64, action: f64, interval: f64, v: &ValueTable) -> Result<f64> {
        let xu = self.state(x)?;
        check_interval(interval, &self.params)?;
        if xu > 0 && !(action > 0.0) {
            return Err(domain("server speed", action));
        }
        Ok(speed_cost(xu, action, self.params.eta) + self.interval_part(interval, v)?)
    }

    fn kernel_eps(&self) -> f64 {
        self.params.tail_eps
    }
}
