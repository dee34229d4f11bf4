//! Inventory held near a target level `θ`.
//!
//! Demand departs as a Poisson process of rate `μ`; replenishment arrives as a
//! Poisson process whose rate `a(t) ∈ [0, ā̄]` is chosen open-loop between
//! observations. The running cost is the expected squared deviation from `θ`
//! plus `ν a(t)`; each observation earns `g(T) = −κT`.
//!
//! With `ā(t) = ∫₀ᵗ a`, Wald's identity gives the deviation cost in closed
//! form, `E[(X(t) − θ)²] = (x − θ + ā(t) − μt)² + ā(t) + μt`, so for a
//! constant rate the stage objective `F(a, T; x, v)` is assembled from the
//! discounted moments `∫₀ᵀ tⁱβᵗ dt` and a birth–death transition row.
//!
//! For time-varying rates the inner problem is an optimal-control problem in
//! the integrator state `y = ā`; [`solve_bang_bang`] searches schedules with
//! levels `{0, ā̄}` and [`costate_backward`] integrates the adjoint used to
//! check the switching law `a = ā̄ ⇔ βᵗν + λ(t) ≤ 0`.

use serde::{Deserialize, Serialize};

use crate::engine::{ObservationMdp, StageChoice, StateWindow, ValueTable};
use crate::error::{Error, Result};
use crate::kernels::{self, discount_integrals, kernel_row, KernelRow};
use crate::optimize::{golden_section, linspace, minimize_interval, refine_coordinates, SearchConfig, SearchPoint};

/// Parameters of the inventory model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InventoryParams {
    /// Target inventory level.
    pub theta: i64,
    /// Departure (demand) rate.
    pub mu: f64,
    /// Cost per unit of arrival rate per unit time.
    pub nu: f64,
    /// Observation reward slope in `g(T) = −κT`.
    pub kappa: f64,
    pub beta: f64,
    /// Upper bound on the controlled arrival rate.
    pub a_max: f64,
    pub t_min: f64,
    pub t_max: f64,
    #[serde(default = "default_kernel_eps")]
    pub eps_kernel: f64,
    #[serde(default = "default_vi_eps")]
    pub eps_vi: f64,
}

fn default_kernel_eps() -> f64 {
    kernels::DEFAULT_KERNEL_EPS
}

fn default_vi_eps() -> f64 {
    1e-6
}

impl InventoryParams {
    /// θ = 8, μ = 2, ā̄ = 5, T ∈ [2, 12], β = 0.8, ν = 2, κ = 5.
    pub fn reference() -> Self {
        InventoryParams {
            theta: 8,
            mu: 2.0,
            nu: 2.0,
            kappa: 5.0,
            beta: 0.8,
            a_max: 5.0,
            t_min: 2.0,
            t_max: 12.0,
            eps_kernel: default_kernel_eps(),
            eps_vi: default_vi_eps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &'static str, reason: &str| Err(Error::InvalidParam { key, reason: reason.to_string() });
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return bad("mu", "must be finite and ≥ 0");
        }
        if !(self.nu >= 0.0 && self.nu.is_finite()) {
            return bad("nu", "must be finite and ≥ 0");
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return bad("kappa", "must be finite and ≥ 0");
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad("beta", "must lie in (0, 1)");
        }
        if !(self.a_max > 0.0 && self.a_max.is_finite()) {
            return bad("a_max", "must be finite and > 0");
        }
        if !(self.t_min > 0.0 && self.t_min <= self.t_max && self.t_max.is_finite()) {
            return bad("t_min", "need 0 < t_min ≤ t_max < ∞");
        }
        if !(self.eps_kernel > 0.0 && self.eps_kernel < 1.0) {
            return bad("eps_kernel", "must lie in (0, 1)");
        }
        if !(self.eps_vi > 0.0) {
            return bad("eps_vi", "must be > 0");
        }
        Ok(())
    }

    /// Observation reward `g(T) = −κT`.
    pub fn observation_cost(&self, t: f64) -> f64 {
        -self.kappa * t
    }

    /// Window margin `m` such that, from `θ`, a single stage leaves
    /// `[θ − m, θ + m]` with probability below `eps` for every admissible
    /// `(a, T)`.
    pub fn default_margin(&self, eps: f64) -> Result<i64> {
        let up = kernels::poisson_cutoff(self.a_max * self.t_max, eps / 2.0)?;
        let down = kernels::poisson_cutoff(self.mu * self.t_max, eps / 2.0)?;
        Ok(up.max(down).max(1) as i64)
    }

    /// Initial values `|x − θ|`.
    pub fn initial_values(&self, window: StateWindow) -> ValueTable {
        ValueTable::from_fn(window, |x| (x - self.theta).abs() as f64)
    }
}

/// Piecewise-constant arrival-rate schedule on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSchedule {
    /// `0 = t₀ < t₁ < … < t_n = horizon`.
    pub breakpoints: Vec<f64>,
    /// Rate on `[t_i, t_{i+1})`.
    pub levels: Vec<f64>,
}

impl RateSchedule {
    pub fn constant(rate: f64, horizon: f64) -> Self {
        RateSchedule {
            breakpoints: vec![0.0, horizon],
            levels: vec![rate],
        }
    }

    /// Alternating `{0, high}` schedule with the given switching times.
    /// Switches outside `(0, horizon)` and coincident pairs are dropped.
    pub fn bang_bang(start_high: bool, high: f64, switches: &[f64], horizon: f64) -> Self {
        let mut breakpoints = vec![0.0];
        let mut levels = vec![if start_high { high } else { 0.0 }];
        let mut sorted: Vec<f64> = switches.to_vec();
        sorted.sort_by(f64::total_cmp);
        for s in sorted {
            let next = if *levels.last().unwrap() > 0.0 { 0.0 } else { high };
            if s <= 0.0 {
                levels[0] = next;
                continue;
            }
            if s >= horizon {
                break;
            }
            if s <= *breakpoints.last().unwrap() {
                // coincident switches cancel
                levels.pop();
                breakpoints.pop();
                if levels.is_empty() {
                    levels.push(next);
                    breakpoints.push(0.0);
                }
                continue;
            }
            breakpoints.push(s);
            levels.push(next);
        }
        breakpoints.push(horizon);
        let mut out = RateSchedule { breakpoints, levels };
        out.merge_equal_levels();
        out
    }

    fn merge_equal_levels(&mut self) {
        let mut bp = vec![self.breakpoints[0]];
        let mut lv: Vec<f64> = Vec::new();
        for (i, &l) in self.levels.iter().enumerate() {
            if lv.last() == Some(&l) {
                continue;
            }
            if i > 0 {
                bp.push(self.breakpoints[i]);
            }
            lv.push(l);
        }
        bp.push(*self.breakpoints.last().unwrap());
        self.breakpoints = bp;
        self.levels = lv;
    }

    pub fn horizon(&self) -> f64 {
        *self.breakpoints.last().unwrap()
    }

    pub fn segments(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.breakpoints
            .windows(2)
            .zip(&self.levels)
            .map(|(w, &l)| (w[0], w[1], l))
    }

    /// Interior switching times.
    pub fn switch_times(&self) -> &[f64] {
        &self.breakpoints[1..self.breakpoints.len() - 1]
    }

    pub fn rate_at(&self, t: f64) -> f64 {
        for (lo, hi, l) in self.segments() {
            if t >= lo && t < hi {
                return l;
            }
        }
        *self.levels.last().unwrap()
    }

    /// Cumulative intensity `ā(t) = ∫₀ᵗ a(s) ds`.
    pub fn cumulative(&self, t: f64) -> f64 {
        let mut acc = 0.0;
        for (lo, hi, l) in self.segments() {
            if t <= lo {
                break;
            }
            acc += l * (t.min(hi) - lo);
        }
        acc
    }

    pub fn max_rate(&self) -> f64 {
        self.levels.iter().copied().fold(0.0, f64::max)
    }
}

/// `E[(X(t) − θ)²] = (x − θ + ā(t) − μt)² + ā(t) + μt`.
pub fn deviation_cost(x: i64, t: f64, sched: &RateSchedule, p: &InventoryParams) -> f64 {
    let arrivals = sched.cumulative(t);
    let departures = p.mu * t;
    let drift = (x - p.theta) as f64 + arrivals - departures;
    drift * drift + arrivals + departures
}

/// `∫₀ᵀ βᵗ [(x−θ+(a−μ)t)² + (a+μ)t + νa] dt` in closed form.
pub fn running_cost_const(a: f64, t: f64, x: i64, p: &InventoryParams) -> Result<f64> {
    let k = discount_integrals(t, p.beta)?;
    let (c2, c1, c0) = running_cost_coefficients(a, x, p);
    Ok(k.quadratic(c0, c1, c2))
}

/// Coefficients `(c₂, c₁, c₀)` of the constant-rate running integrand
/// `c₀ + c₁t + c₂t²`.
fn running_cost_coefficients(a: f64, x: i64, p: &InventoryParams) -> (f64, f64, f64) {
    let dev = (x - p.theta) as f64;
    let s = a - p.mu;
    (s * s, 2.0 * dev * s + a + p.mu, dev * dev + p.nu * a)
}

/// Terminal cost `h(y, T) = β^T Σ q(x, x'; y, μT) v(x') + g(T)` with the
/// transition row given total arrival intensity `y`.
pub fn terminal_cost(x: i64, y: f64, t: f64, v: &ValueTable, p: &InventoryParams) -> Result<f64> {
    let row = kernel_row(x, y, p.mu * t, p.eps_kernel)?;
    Ok(p.beta.powf(t) * expect_clamped(&row, v) + p.observation_cost(t))
}

#[inline]
fn expect_clamped(row: &KernelRow, v: &ValueTable) -> f64 {
    row.iter().map(|(s, q)| q * v.clamped(s)).sum()
}

/// Stage objective `F(a, T; x, v)` for a constant arrival rate `a`.
pub fn stage_objective_const(a: f64, t: f64, x: i64, v: &ValueTable, p: &InventoryParams) -> Result<f64> {
    if !(0.0..=p.a_max).contains(&a) {
        return Err(crate::error::domain("arrival rate", a));
    }
    if !(p.t_min..=p.t_max).contains(&t) {
        return Err(crate::error::domain("observation interval", t));
    }
    Ok(running_cost_const(a, t, x, p)? + terminal_cost(x, a * t, t, v, p)?)
}

/// The inventory problem as an [`ObservationMdp`] with constant rates per
/// observation interval.
pub struct InventoryModel {
    pub params: InventoryParams,
    window: StateWindow,
    search: SearchConfig,
    a_grid: Vec<f64>,
    t_grid: Vec<f64>,
    /// Rows from state 0 on the `t`-major search grid, reused every stage.
    grid_rows: Vec<KernelRow>,
    grid_running: Vec<(f64, f64, f64, f64)>,
}

impl InventoryModel {
    /// Model on `[θ − margin, θ + margin]`; `None` picks the margin from
    /// [`InventoryParams::default_margin`] at escape probability `1e-9`.
    pub fn new(params: InventoryParams, margin: Option<i64>, search: SearchConfig) -> Result<Self> {
        params.validate()?;
        let margin = match margin {
            Some(m) if m >= 0 => m,
            Some(m) => {
                return Err(Error::InvalidParam {
                    key: "window_margin",
                    reason: format!("must be ≥ 0, got {m}"),
                })
            }
            None => params.default_margin(1e-9)?,
        };
        let window = StateWindow::new(params.theta - margin, params.theta + margin)?;
        if search.grid_a == 0 || search.grid_t == 0 {
            return Err(Error::InvalidParam {
                key: "grid",
                reason: "grid sizes must be ≥ 1".into(),
            });
        }
        let a_grid = linspace(0.0, params.a_max, search.grid_a);
        let t_grid = linspace(params.t_min, params.t_max, search.grid_t);
        let mut grid_rows = Vec::with_capacity(a_grid.len() * t_grid.len());
        let mut grid_running = Vec::with_capacity(t_grid.len());
        for &t in &t_grid {
            let k = discount_integrals(t, params.beta)?;
            grid_running.push((k.dk0, k.dk1, k.dk2, params.beta.powf(t)));
            for &a in &a_grid {
                grid_rows.push(kernel_row(0, a * t, params.mu * t, params.eps_kernel)?);
            }
        }
        Ok(InventoryModel {
            params,
            window,
            search,
            a_grid,
            t_grid,
            grid_rows,
            grid_running,
        })
    }

    /// Model for the reference parameters on `θ ± margin`.
    pub fn reference(margin: i64) -> Result<Self> {
        Self::new(InventoryParams::reference(), Some(margin), SearchConfig::default())
    }

    pub fn search(&self) -> &SearchConfig {
        &self.search
    }

    fn grid_value(&self, x: i64, ia: usize, it: usize, v: &ValueTable) -> f64 {
        let p = &self.params;
        let (dk0, dk1, dk2, bt) = self.grid_running[it];
        let a = self.a_grid[ia];
        let t = self.t_grid[it];
        let (c2, c1, c0) = running_cost_coefficients(a, x, p);
        let row = &self.grid_rows[it * self.a_grid.len() + ia];
        let cont: f64 = row
            .probs
            .iter()
            .enumerate()
            .map(|(i, q)| q * v.clamped(x + row.first + i as i64))
            .sum();
        c0 * dk0 + c1 * dk1 + c2 * dk2 + bt * cont + p.observation_cost(t)
    }

    /// Joint minimization of `F(a, T; x, v)` over `[0, ā̄] × [T̲, T̄]`: grid
    /// scan, then coordinate golden-section refinement from the best grid
    /// point. The seed `(0, T̄)` is a grid corner.
    pub fn optimize_stage(&self, x: i64, v: &ValueTable) -> Result<StageChoice> {
        let p = &self.params;
        let mut best: Option<SearchPoint> = None;
        for it in 0..self.t_grid.len() {
            for ia in 0..self.a_grid.len() {
                let value = self.grid_value(x, ia, it, v);
                if !value.is_finite() {
                    return Err(Error::StageOptimizer {
                        state: x,
                        reason: format!("non-finite objective at a={}, T={}", self.a_grid[ia], self.t_grid[it]),
                    });
                }
                if best.is_none_or(|b| value < b.value) {
                    best = Some(SearchPoint {
                        a: self.a_grid[ia],
                        t: self.t_grid[it],
                        value,
                    });
                }
            }
        }
        let mut best = best.expect("non-empty grid");
        let step = |g: &[f64]| if g.len() > 1 { g[1] - g[0] } else { 0.0 };
        let mut failure = None;
        let mut f = |a: f64, t: f64| match stage_objective_const(a, t, x, v, p) {
            Ok(val) => val,
            Err(e) => {
                failure.get_or_insert(e);
                f64::INFINITY
            }
        };
        refine_coordinates(
            &mut f,
            &mut best,
            (0.0, p.a_max),
            (p.t_min, p.t_max),
            (step(&self.a_grid), step(&self.t_grid)),
            &self.search,
        );
        if let Some(e) = failure {
            return Err(Error::StageOptimizer {
                state: x,
                reason: e.to_string(),
            });
        }
        Ok(StageChoice {
            action: best.a,
            interval: best.t,
            value: best.value,
        })
    }
}

impl ObservationMdp for InventoryModel {
    fn window(&self) -> StateWindow {
        self.window
    }

    fn discount_base(&self) -> f64 {
        self.params.beta
    }

    fn min_interval(&self) -> f64 {
        self.params.t_min
    }

    fn stage_value(&self, x: i64, v: &ValueTable) -> Result<StageChoice> {
        self.optimize_stage(x, v)
    }

    fn stage_objective(&self, x: i64, action: f64, interval: f64, v: &ValueTable) -> Result<f64> {
        stage_objective_const(action, interval, x, v, &self.params)
    }

    fn kernel_eps(&self) -> f64 {
        self.params.eps_kernel
    }

    fn escape_mass(&self, x: i64, c: &StageChoice) -> f64 {
        let p = &self.params;
        match kernel_row(x, c.action * c.interval, p.mu * c.interval, p.eps_kernel) {
            Ok(row) => row
                .iter()
                .filter(|(s, _)| !self.window.contains(*s))
                .map(|(_, q)| q)
                .sum(),
            Err(_) => 1.0,
        }
    }
}

// ── Inhomogeneous rates: minimum principle ───────────────────────────────

/// Adjoint trajectory `λ(t)` on a time grid, with `λ̇` at the nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostateTrajectory {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub rates: Vec<f64>,
}

impl CostateTrajectory {
    /// Cubic Hermite interpolation of `λ` at `t`.
    pub fn at(&self, t: f64) -> f64 {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.values[0];
        }
        if t >= self.times[n - 1] {
            return self.values[n - 1];
        }
        let i = (self.times.partition_point(|&s| s <= t) - 1).min(n - 2);
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let h = t1 - t0;
        if h <= 0.0 {
            return self.values[i + 1];
        }
        let s = (t - t0) / h;
        let (s2, s3) = (s * s, s * s * s);
        (2.0 * s3 - 3.0 * s2 + 1.0) * self.values[i]
            + (s3 - 2.0 * s2 + s) * h * self.rates[i]
            + (-2.0 * s3 + 3.0 * s2) * self.values[i + 1]
            + (s3 - s2) * h * self.rates[i + 1]
    }
}

/// Finite-difference step in `ā(T)` for `∂h/∂y`.
pub const TERMINAL_FD_STEP: f64 = 1e-4;

/// `∂h/∂y` at `y` by central differences (second-order one-sided near 0).
pub fn terminal_gradient(x: i64, y: f64, t: f64, v: &ValueTable, p: &InventoryParams) -> Result<f64> {
    let h = TERMINAL_FD_STEP;
    if y >= h {
        let up = terminal_cost(x, y + h, t, v, p)?;
        let down = terminal_cost(x, y - h, t, v, p)?;
        Ok((up - down) / (2.0 * h))
    } else {
        let f0 = terminal_cost(x, y, t, v, p)?;
        let f1 = terminal_cost(x, y + h, t, v, p)?;
        let f2 = terminal_cost(x, y + 2.0 * h, t, v, p)?;
        Ok((-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * h))
    }
}

/// Default number of RK4 steps for [`costate_backward`].
pub const COSTATE_STEPS: usize = 1000;

/// Integrates `λ̇ = −βᵗ{2(x − θ + y(t) − μt) + 1}` backward from
/// `λ(T) = ∂h/∂y(ā(T), T)` with fixed-step RK4. Steps are aligned to the
/// schedule's switching times so the right-hand side is smooth within each.
pub fn costate_backward(
    x: i64,
    sched: &RateSchedule,
    t_end: f64,
    v: &ValueTable,
    p: &InventoryParams,
    steps: usize,
) -> Result<CostateTrajectory> {
    if !(t_end > 0.0) || (sched.horizon() - t_end).abs() > 1e-12 * t_end.max(1.0) {
        return Err(crate::error::domain("costate horizon", t_end));
    }
    let terminal = terminal_gradient(x, sched.cumulative(t_end), t_end, v, p)?;
    let dev = (x - p.theta) as f64;
    let ln_beta = p.beta.ln();
    let rhs = |t: f64| -(ln_beta * t).exp() * (2.0 * (dev + sched.cumulative(t) - p.mu * t) + 1.0);

    let steps = steps.max(1);
    let mut times = vec![t_end];
    let mut values = vec![terminal];
    let mut rates = vec![rhs(t_end)];
    let mut lam = terminal;
    let segs: Vec<(f64, f64, f64)> = sched.segments().collect();
    for &(lo, hi, _) in segs.iter().rev() {
        let n = (((hi - lo) / t_end) * steps as f64).ceil().max(1.0) as usize;
        let h = (hi - lo) / n as f64;
        for i in 0..n {
            let t = hi - h * i as f64;
            // λ depends on t only through the right-hand side
            let k1 = rhs(t);
            let k2 = rhs(t - 0.5 * h);
            let k4 = rhs(t - h);
            lam -= h / 6.0 * (k1 + 4.0 * k2 + k4);
            let node = if i + 1 == n { lo } else { t - h };
            times.push(node);
            values.push(lam);
            rates.push(rhs(node));
        }
    }
    times.reverse();
    values.reverse();
    rates.reverse();
    Ok(CostateTrajectory { times, values, rates })
}

/// Switching function `βᵗν + λ(t)`; the rate is `ā̄` where it is ≤ 0.
pub fn switching_function(t: f64, costate: &CostateTrajectory, p: &InventoryParams) -> f64 {
    p.beta.powf(t) * p.nu + costate.at(t)
}

/// Objective of an arbitrary piecewise-constant schedule: closed-form
/// running cost per segment plus the terminal cost at `ā(T)`.
pub fn schedule_objective(x: i64, sched: &RateSchedule, v: &ValueTable, p: &InventoryParams) -> Result<f64> {
    let dev = (x - p.theta) as f64;
    let mut running = 0.0;
    let mut prev = discount_integrals(0.0, p.beta)?;
    let mut cum = 0.0;
    for (lo, hi, a) in sched.segments() {
        let k = discount_integrals(hi, p.beta)?;
        let seg = k.sub(&prev);
        // ā(t) = c + a t on this segment
        let c = cum - a * lo;
        let u = dev + c;
        let s = a - p.mu;
        running += seg.quadratic(u * u + c + p.nu * a, 2.0 * u * s + a + p.mu, s * s);
        cum += a * (hi - lo);
        prev = k;
    }
    let t = sched.horizon();
    Ok(running + terminal_cost(x, cum, t, v, p)?)
}

/// Outcome of the switching-law check on a bang-bang schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchingCheck {
    pub samples: usize,
    /// Sample times where the schedule disagrees with the sign of the
    /// switching function, away from every switch.
    pub violations: Vec<f64>,
    pub tolerance: f64,
}

impl SwitchingCheck {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BangBangSolution {
    pub schedule: RateSchedule,
    pub objective: f64,
    pub check: SwitchingCheck,
    pub warnings: Vec<String>,
}

/// Grid size per switching time in [`solve_bang_bang`].
const SWITCH_GRID: usize = 33;

/// Best `{0, ā̄}` schedule on `[0, T]` with at most `n_switch` switches,
/// verified against the minimum-principle switching law.
pub fn solve_bang_bang(x: i64, t: f64, v: &ValueTable, p: &InventoryParams, n_switch: usize) -> Result<BangBangSolution> {
    p.validate()?;
    if !(t > 0.0 && t.is_finite()) {
        return Err(crate::error::domain("observation interval", t));
    }
    let tol = 1e-9 * t.max(1.0);
    let eval = |start_high: bool, sw: &[f64]| -> f64 {
        let s = RateSchedule::bang_bang(start_high, p.a_max, sw, t);
        schedule_objective(x, &s, v, p).unwrap_or(f64::INFINITY)
    };

    let mut best: Option<(f64, bool, Vec<f64>)> = None;
    // simpler schedules win unless a richer one is better beyond round-off
    let mut offer = |value: f64, start_high: bool, sw: Vec<f64>| {
        if best.as_ref().is_none_or(|b| value < b.0 - 1e-12 * b.0.abs().max(1.0)) {
            best = Some((value, start_high, sw));
        }
    };
    for start_high in [false, true] {
        offer(eval(start_high, &[]), start_high, vec![]);
        if n_switch >= 1 {
            let (s, val) = minimize_interval(|s| eval(start_high, &[s]), 0.0, t, SWITCH_GRID, tol);
            offer(val, start_high, vec![s]);
        }
        if n_switch >= 2 {
            let grid = linspace(0.0, t, SWITCH_GRID);
            let mut pt = SearchPoint {
                a: 0.0,
                t: 0.0,
                value: f64::INFINITY,
            };
            for (i, &s1) in grid.iter().enumerate() {
                for &s2 in &grid[i..] {
                    let val = eval(start_high, &[s1, s2]);
                    if val < pt.value {
                        pt = SearchPoint { a: s1, t: s2, value: val };
                    }
                }
            }
            let h = grid[1] - grid[0];
            let cfg = SearchConfig {
                tol,
                max_sweeps: 100,
                ..SearchConfig::default()
            };
            let mut f = |s1: f64, s2: f64| eval(start_high, &[s1, s2]);
            refine_coordinates(&mut f, &mut pt, (0.0, t), (0.0, t), (h, h), &cfg);
            offer(pt.value, start_high, vec![pt.a, pt.t]);
        }
        if n_switch >= 3 {
            // coordinate polishing from evenly spaced switches
            let mut sw: Vec<f64> = (1..=n_switch).map(|i| t * i as f64 / (n_switch + 1) as f64).collect();
            let mut val = eval(start_high, &sw);
            for _ in 0..50 {
                let before = sw.clone();
                for i in 0..sw.len() {
                    let mut trial = sw.clone();
                    let (s, fv) = golden_section(
                        |s| {
                            trial[i] = s;
                            eval(start_high, &trial)
                        },
                        0.0,
                        t,
                        tol,
                        (sw[i], val),
                    );
                    sw[i] = s;
                    val = fv;
                }
                if before.iter().zip(&sw).all(|(a, b)| (a - b).abs() <= tol) {
                    break;
                }
            }
            offer(val, start_high, sw);
        }
    }
    let (objective, start_high, sw) = best.expect("at least the constant schedules are evaluated");
    let schedule = RateSchedule::bang_bang(start_high, p.a_max, &sw, t);
    let check = check_switching_law(x, &schedule, v, p, 1000, 1e-3 * t)?;
    let mut warnings = Vec::new();
    if !check.passed() {
        warnings.push(format!(
            "switching law violated at {} of {} sample points (first at t = {:.6})",
            check.violations.len(),
            check.samples,
            check.violations[0]
        ));
    }
    Ok(BangBangSolution {
        schedule,
        objective,
        check,
        warnings,
    })
}

/// Compares the schedule's level with the sign of `βᵗν + λ(t)` at `samples`
/// midpoints. Disagreements within `tolerance` of a schedule switch or of a
/// zero of the switching function are ignored.
pub fn check_switching_law(
    x: i64,
    schedule: &RateSchedule,
    v: &ValueTable,
    p: &InventoryParams,
    samples: usize,
    tolerance: f64,
) -> Result<SwitchingCheck> {
    let t_end = schedule.horizon();
    let costate = costate_backward(x, schedule, t_end, v, p, COSTATE_STEPS)?;
    let fine = 20 * samples;
    let zeros: Vec<f64> = (0..fine)
        .filter_map(|i| {
            let t0 = t_end * i as f64 / fine as f64;
            let t1 = t_end * (i + 1) as f64 / fine as f64;
            let (s0, s1) = (switching_function(t0, &costate, p), switching_function(t1, &costate, p));
            (s0 == 0.0 || (s0 > 0.0) != (s1 > 0.0)).then_some(0.5 * (t0 + t1))
        })
        .collect();
    let near = |t: f64, pts: &[f64]| pts.iter().any(|&s| (s - t).abs() <= tolerance);
    let violations = (0..samples)
        .map(|i| t_end * (i as f64 + 0.5) / samples as f64)
        .filter(|&t| {
            let high = schedule.rate_at(t) > 0.0;
            let want_high = switching_function(t, &costate, p) <= 0.0;
            high != want_high && !near(t, schedule.switch_times()) && !near(t, &zeros)
        })
        .collect();
    Ok(SwitchingCheck {
        samples,
        violations,
        tolerance,
    })
}
