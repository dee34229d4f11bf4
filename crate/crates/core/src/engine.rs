//! Discrete-time reformulation of the observation-controlled jump MDP.
//!
//! Between two observation epochs the controller commits to an action and an
//! interval `T`; the value of a state then satisfies
//!
//! ```text
//! v(x) = opt_{a, T ≥ T̲} { r̄(x, a, T) + β^T Σ_{x'} q(x, x'; a, T) v(x') + g(T) }
//! ```
//!
//! Models implement [`ObservationMdp::stage_value`] (the inner optimization
//! over `(a, T)` for one state); this module supplies the Bellman operator,
//! value iteration with sup-norm stopping, greedy policy extraction, and a
//! bound on the error introduced by kernel truncation and window clamping.
//!
//! Each iteration contracts by at least `β^{T̲}` in the sup norm.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whether the model's stage problem is a minimization or a maximization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Minimize,
    Maximize,
}

impl Direction {
    /// `true` if `candidate` is strictly better than `incumbent`.
    pub fn improves(self, candidate: f64, incumbent: f64) -> bool {
        match self {
            Direction::Minimize => candidate < incumbent,
            Direction::Maximize => candidate > incumbent,
        }
    }

    /// Sign that turns the objective into a minimization.
    pub fn sign(self) -> f64 {
        match self {
            Direction::Minimize => 1.0,
            Direction::Maximize => -1.0,
        }
    }
}

/// Inclusive interval of integer states the solver works on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[i64; 2]", into = "[i64; 2]")]
pub struct StateWindow {
    pub lo: i64,
    pub hi: i64,
}

impl From<[i64; 2]> for StateWindow {
    fn from([lo, hi]: [i64; 2]) -> Self {
        StateWindow { lo, hi }
    }
}

impl From<StateWindow> for [i64; 2] {
    fn from(w: StateWindow) -> Self {
        [w.lo, w.hi]
    }
}

impl StateWindow {
    pub fn new(lo: i64, hi: i64) -> Result<Self> {
        if hi < lo {
            return Err(Error::InvalidParam {
                key: "window",
                reason: format!("empty window [{lo}, {hi}]"),
            });
        }
        Ok(StateWindow { lo, hi })
    }

    pub fn len(&self) -> usize {
        (self.hi - self.lo + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.hi < self.lo
    }

    pub fn contains(&self, x: i64) -> bool {
        (self.lo..=self.hi).contains(&x)
    }

    /// Nearest state of the window.
    pub fn clamp(&self, x: i64) -> i64 {
        x.clamp(self.lo, self.hi)
    }

    pub fn states(&self) -> impl Iterator<Item = i64> + Clone {
        self.lo..=self.hi
    }

    fn index(&self, x: i64) -> usize {
        (x - self.lo) as usize
    }
}

/// Values over a state window, plus iteration bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub window: StateWindow,
    pub values: Vec<f64>,
    #[serde(default)]
    pub iteration_count: usize,
    #[serde(default)]
    pub residual_history: Vec<f64>,
}

impl ValueTable {
    pub fn from_fn(window: StateWindow, f: impl Fn(i64) -> f64) -> Self {
        ValueTable {
            window,
            values: window.states().map(f).collect(),
            iteration_count: 0,
            residual_history: Vec::new(),
        }
    }

    pub fn zeros(window: StateWindow) -> Self {
        Self::from_fn(window, |_| 0.0)
    }

    pub fn get(&self, x: i64) -> Option<f64> {
        self.window.contains(x).then(|| self.values[self.window.index(x)])
    }

    /// Value at `x`, with states beyond the window mapped to the nearest edge.
    #[inline]
    pub fn clamped(&self, x: i64) -> f64 {
        self.values[self.window.index(self.window.clamp(x))]
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.window.states().zip(self.values.iter().copied())
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `‖self − other‖_∞`; the windows must agree.
    pub fn sup_distance(&self, other: &ValueTable) -> f64 {
        debug_assert_eq!(self.window, other.window);
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// One state's optimal `(action, interval)` and the stage objective there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageChoice {
    pub action: f64,
    pub interval: f64,
    pub value: f64,
}

/// Greedy policy over a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagePolicy {
    pub window: StateWindow,
    pub choices: Vec<StageChoice>,
}

impl StagePolicy {
    pub fn get(&self, x: i64) -> Option<&StageChoice> {
        self.window.contains(x).then(|| &self.choices[self.window.index(x)])
    }

    /// Choice for `x`, using the nearest window edge outside the window.
    pub fn clamped(&self, x: i64) -> &StageChoice {
        &self.choices[self.window.index(self.window.clamp(x))]
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, &StageChoice)> + '_ {
        self.window.states().zip(self.choices.iter())
    }
}

/// A model whose Bellman equation the engine can iterate.
pub trait ObservationMdp: Sync {
    fn window(&self) -> StateWindow;

    fn discount_base(&self) -> f64;

    /// Smallest admissible observation interval `T̲ > 0`.
    fn min_interval(&self) -> f64;

    fn direction(&self) -> Direction {
        Direction::Minimize
    }

    /// Optimal `(a, T)` and objective for state `x` given continuation
    /// values `v`. Ties go to the smallest `T`, then the smallest `a`.
    fn stage_value(&self, x: i64, v: &ValueTable) -> Result<StageChoice>;

    /// Stage objective at a fixed `(action, interval)`.
    fn stage_objective(&self, x: i64, action: f64, interval: f64, v: &ValueTable) -> Result<f64>;

    /// Upper bound on the transition mass dropped by kernel truncation at
    /// one stage.
    fn kernel_eps(&self) -> f64 {
        0.0
    }

    /// Probability that the transition from `x` under `choice` leaves the
    /// window (and is therefore clamped to its edge).
    fn escape_mass(&self, _x: i64, _choice: &StageChoice) -> f64 {
        0.0
    }

    /// Per-stage contraction factor `β^{T̲}`.
    fn contraction_factor(&self) -> f64 {
        self.discount_base().powf(self.min_interval())
    }
}

fn check_window(model: &impl ObservationMdp, v: &ValueTable) -> Result<()> {
    let w = model.window();
    if v.window != w || v.values.len() != w.len() {
        return Err(Error::InvalidParam {
            key: "value table",
            reason: format!("window [{}, {}] does not match model window [{}, {}]", v.window.lo, v.window.hi, w.lo, w.hi),
        });
    }
    Ok(())
}

fn stage_choices(model: &impl ObservationMdp, v: &ValueTable) -> Result<Vec<StageChoice>> {
    let states: Vec<i64> = model.window().states().collect();
    // collect() keeps state order regardless of scheduling
    states.par_iter().map(|&x| model.stage_value(x, v)).collect()
}

/// One application of the Bellman operator.
pub fn bellman_update(model: &impl ObservationMdp, v: &ValueTable) -> Result<ValueTable> {
    check_window(model, v)?;
    let choices = stage_choices(model, v)?;
    Ok(ValueTable {
        window: v.window,
        values: choices.iter().map(|c| c.value).collect(),
        iteration_count: v.iteration_count + 1,
        residual_history: v.residual_history.clone(),
    })
}

/// Greedy policy with respect to `v`.
pub fn extract_policy(model: &impl ObservationMdp, v: &ValueTable) -> Result<StagePolicy> {
    check_window(model, v)?;
    Ok(StagePolicy {
        window: v.window,
        choices: stage_choices(model, v)?,
    })
}

/// Iterates the Bellman operator from `v0` until `‖v_{k+1} − v_k‖_∞ ≤ eps`.
pub fn value_iteration(
    model: &impl ObservationMdp,
    v0: ValueTable,
    eps: f64,
    max_iter: usize,
) -> Result<(ValueTable, StagePolicy)> {
    value_iteration_with(model, v0, eps, max_iter, |_, _| {})
}

/// [`value_iteration`] with a callback receiving `(iteration, residual)`.
pub fn value_iteration_with(
    model: &impl ObservationMdp,
    v0: ValueTable,
    eps: f64,
    max_iter: usize,
    mut on_iter: impl FnMut(usize, f64),
) -> Result<(ValueTable, StagePolicy)> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParam {
            key: "eps_vi",
            reason: format!("must be positive, got {eps}"),
        });
    }
    check_window(model, &v0)?;
    let mut v = v0;
    for k in 0..max_iter {
        let next = bellman_update(model, &v)?;
        let residual = next.sup_distance(&v);
        on_iter(k + 1, residual);
        let mut history = std::mem::take(&mut v.residual_history);
        history.push(residual);
        v = ValueTable {
            residual_history: history,
            ..next
        };
        if residual <= eps {
            let policy = extract_policy(model, &v)?;
            return Ok((v, policy));
        }
    }
    Err(Error::NotConverged {
        iterations: max_iter,
        residual: v.residual_history.last().copied().unwrap_or(f64::INFINITY),
        residual_history: v.residual_history,
    })
}

/// Bound on `|v_reported − v_exact|` from kernel truncation and window
/// clamping, summed geometrically at rate `β^{T̲}`.
///
/// Per stage the dropped kernel mass costs at most `eps · sup|v|` and each
/// unit of mass clamped to the window edge at most `2 sup|v|`.
pub fn truncation_error_bound(model: &impl ObservationMdp, v: &ValueTable) -> Result<f64> {
    let policy = extract_policy(model, v)?;
    let escape = policy
        .iter()
        .map(|(x, c)| model.escape_mass(x, c))
        .fold(0.0, f64::max);
    let per_stage = (model.kernel_eps() + 2.0 * escape) * v.sup_abs();
    Ok(per_stage / (1.0 - model.contraction_factor()))
}

/// JSON document holding a value table and, optionally, its policy:
/// `{"window":[lo,hi], "values":[...], "policy":[{"x":..,"a":..,"T":..}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionDocument {
    pub window: StateWindow,
    pub values: Vec<f64>,
    #[serde(default)]
    pub policy: Vec<PolicyEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyEntry {
    pub x: i64,
    pub a: f64,
    #[serde(rename = "T")]
    pub t: f64,
}

impl SolutionDocument {
    pub fn new(v: &ValueTable, policy: Option<&StagePolicy>) -> Self {
        SolutionDocument {
            window: v.window,
            values: v.values.clone(),
            policy: policy
                .map(|p| {
                    p.iter()
                        .map(|(x, c)| PolicyEntry {
                            x,
                            a: c.action,
                            t: c.interval,
                        })
                        .collect()
                })
                .unwrap_or_default(),
        }
    }

    pub fn value_table(&self) -> ValueTable {
        ValueTable {
            window: self.window,
            values: self.values.clone(),
            iteration_count: 0,
            residual_history: Vec::new(),
        }
    }

    /// Policy entries re-keyed by the document's window; stage values are
    /// taken from `values`.
    pub fn stage_policy(&self) -> Result<StagePolicy> {
        if self.policy.len() != self.window.len() || self.values.len() != self.window.len() {
            return Err(Error::InvalidParam {
                key: "policy",
                reason: format!("expected {} entries", self.window.len()),
            });
        }
        let choices = self
            .policy
            .iter()
            .zip(self.window.states())
            .zip(&self.values)
            .map(|((e, x), &value)| {
                if e.x != x {
                    return Err(Error::InvalidParam {
                        key: "policy",
                        reason: format!("entry for state {} found where {x} expected", e.x),
                    });
                }
                Ok(StageChoice {
                    action: e.a,
                    interval: e.t,
                    value,
                })
            })
            .collect::<Result<_>>()?;
        Ok(StagePolicy {
            window: self.window,
            choices,
        })
    }
}

#[cfg(test)]
pub(crate) mod toy {
    use super::*;
    use crate::optimize::{minimize_rectangle, SearchConfig};

    /// A single state with constant running cost `c` and a fixed interval.
    pub struct SingleState {
        pub cost: f64,
        pub beta: f64,
        pub interval: f64,
    }

    impl ObservationMdp for SingleState {
        fn window(&self) -> StateWindow {
            StateWindow { lo: 0, hi: 0 }
        }
        fn discount_base(&self) -> f64 {
            self.beta
        }
        fn min_interval(&self) -> f64 {
            self.interval
        }
        fn stage_value(&self, x: i64, v: &ValueTable) -> Result<StageChoice> {
            Ok(StageChoice {
                action: 0.0,
                interval: self.interval,
                value: self.stage_objective(x, 0.0, self.interval, v)?,
            })
        }
        fn stage_objective(&self, _x: i64, _a: f64, t: f64, v: &ValueTable) -> Result<f64> {
            Ok(self.cost + self.beta.powf(t) * v.values[0])
        }
    }

    /// Random-walk chain on a small window with a quadratic-in-action cost,
    /// used to exercise the operator's structural properties.
    pub struct Chain {
        pub window: StateWindow,
        pub beta: f64,
        pub t_min: f64,
        pub t_max: f64,
        pub direction: Direction,
    }

    impl ObservationMdp for Chain {
        fn window(&self) -> StateWindow {
            self.window
        }
        fn discount_base(&self) -> f64 {
            self.beta
        }
        fn min_interval(&self) -> f64 {
            self.t_min
        }
        fn direction(&self) -> Direction {
            self.direction
        }
        fn stage_value(&self, x: i64, v: &ValueTable) -> Result<StageChoice> {
            let s = self.direction.sign();
            let cfg = SearchConfig {
                grid_a: 11,
                grid_t: 11,
                ..SearchConfig::default()
            };
            let p = minimize_rectangle(
                |a, t| s * self.stage_objective(x, a, t, v).unwrap(),
                (0.0, 1.0),
                (self.t_min, self.t_max),
                &cfg,
            )
            .map_err(|(a, t, _)| Error::StageOptimizer {
                state: x,
                reason: format!("non-finite objective at a={a}, T={t}"),
            })?;
            Ok(StageChoice {
                action: p.a,
                interval: p.t,
                value: s * p.value,
            })
        }
        fn stage_objective(&self, x: i64, a: f64, t: f64, v: &ValueTable) -> Result<f64> {
            // move up with probability a, down otherwise
            let cont = a * v.clamped(x + 1) + (1.0 - a) * v.clamped(x - 1);
            let running = (x as f64).powi(2) * t + (a - 0.3).powi(2) + 1.0 / t;
            Ok(running + self.beta.powf(t) * cont)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::toy::*;
    use super::*;

    #[test]
    fn single_state_fixed_point() {
        let m = SingleState {
            cost: 3.0,
            beta: 0.8,
            interval: 2.0,
        };
        let w = m.window();
        let v1 = bellman_update(&m, &ValueTable::from_fn(w, |_| 10.0)).unwrap();
        assert!((v1.values[0] - (3.0 + 0.64 * 10.0)).abs() < 1e-12);

        let eps = 1e-9;
        let (v, policy) = value_iteration(&m, ValueTable::zeros(w), eps, 1000).unwrap();
        let fixed = 3.0 / (1.0 - 0.64);
        assert!((v.values[0] - fixed).abs() < eps / (1.0 - 0.64));
        let bound = (eps.ln() / 0.64f64.ln()).ceil() as usize + 3;
        assert!(v.iteration_count <= bound, "{} > {bound}", v.iteration_count);
        assert_eq!(policy.choices[0].interval, 2.0);
        for w in v.residual_history.windows(2) {
            assert!(w[1] / w[0] <= 0.64 + 1e-6);
        }
    }

    #[test]
    fn zero_values_give_one_stage_cost() {
        let m = SingleState {
            cost: 1.5,
            beta: 0.9,
            interval: 1.0,
        };
        let v = bellman_update(&m, &ValueTable::zeros(m.window())).unwrap();
        assert_eq!(v.values[0], 1.5);
    }

    #[test]
    fn not_converged_carries_history() {
        let m = SingleState {
            cost: 1.0,
            beta: 0.99,
            interval: 1.0,
        };
        match value_iteration(&m, ValueTable::zeros(m.window()), 1e-12, 5) {
            Err(Error::NotConverged {
                iterations,
                residual_history,
                residual,
            }) => {
                assert_eq!(iterations, 5);
                assert_eq!(residual_history.len(), 5);
                assert_eq!(residual, residual_history[4]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn window_mismatch_rejected() {
        let m = SingleState {
            cost: 1.0,
            beta: 0.5,
            interval: 1.0,
        };
        let v = ValueTable::zeros(StateWindow { lo: 0, hi: 3 });
        assert!(bellman_update(&m, &v).is_err());
        assert!(StateWindow::new(3, 2).is_err());
    }

    #[test]
    fn truncation_bound_examples() {
        let m = SingleState {
            cost: 1.0,
            beta: 0.8,
            interval: 2.0,
        };
        let v = ValueTable::from_fn(m.window(), |_| 100.0);
        assert_eq!(truncation_error_bound(&m, &v).unwrap(), 0.0);

        struct Leaky(SingleState);
        impl ObservationMdp for Leaky {
            fn window(&self) -> StateWindow {
                self.0.window()
            }
            fn discount_base(&self) -> f64 {
                self.0.beta
            }
            fn min_interval(&self) -> f64 {
                self.0.interval
            }
            fn stage_value(&self, x: i64, v: &ValueTable) -> Result<StageChoice> {
                self.0.stage_value(x, v)
            }
            fn stage_objective(&self, x: i64, a: f64, t: f64, v: &ValueTable) -> Result<f64> {
                self.0.stage_objective(x, a, t, v)
            }
            fn kernel_eps(&self) -> f64 {
                1e-9
            }
        }
        let b = truncation_error_bound(&Leaky(m), &v).unwrap();
        assert!((b - 1e-9 * 100.0 / 0.36).abs() < 1e-18);
        assert!(b <= 2.8e-7);
    }

    #[test]
    fn constant_objective_tie_break() {
        struct Flat;
        impl ObservationMdp for Flat {
            fn window(&self) -> StateWindow {
                StateWindow { lo: 0, hi: 2 }
            }
            fn discount_base(&self) -> f64 {
                0.5
            }
            fn min_interval(&self) -> f64 {
                2.0
            }
            fn stage_value(&self, x: i64, v: &ValueTable) -> Result<StageChoice> {
                let p = crate::optimize::minimize_rectangle(
                    |a, t| self.stage_objective(x, a, t, v).unwrap(),
                    (0.5, 4.0),
                    (2.0, 9.0),
                    &Default::default(),
                )
                .unwrap();
                Ok(StageChoice {
                    action: p.a,
                    interval: p.t,
                    value: p.value,
                })
            }
            fn stage_objective(&self, _: i64, _: f64, _: f64, _: &ValueTable) -> Result<f64> {
                Ok(7.0)
            }
        }
        let p = extract_policy(&Flat, &ValueTable::zeros(Flat.window())).unwrap();
        for c in &p.choices {
            assert_eq!((c.action, c.interval), (0.5, 2.0));
        }
    }

    fn chain(direction: Direction) -> Chain {
        Chain {
            window: StateWindow { lo: -4, hi: 4 },
            beta: 0.7,
            t_min: 0.5,
            t_max: 3.0,
            direction,
        }
    }

    #[test]
    fn chain_converges_to_fixed_point() {
        let m = chain(Direction::Minimize);
        let eps = 1e-8;
        let (v, policy) = value_iteration(&m, ValueTable::zeros(m.window()), eps, 500).unwrap();
        let again = bellman_update(&m, &v).unwrap();
        assert!(again.sup_distance(&v) <= eps);
        // greedy choice reproduces the stage value
        for (x, c) in policy.iter() {
            let f = m.stage_objective(x, c.action, c.interval, &v).unwrap();
            assert!((f - c.value).abs() < 1e-12);
            assert!((c.value - v.get(x).unwrap()).abs() <= eps);
            assert!(c.interval >= m.t_min);
        }
        let rate = m.contraction_factor();
        for w in v.residual_history.windows(2) {
            assert!(w[1] <= rate * w[0] + 1e-9, "{w:?}");
        }
    }

    #[test]
    fn maximize_direction() {
        let m = chain(Direction::Maximize);
        let v = ValueTable::zeros(m.window());
        let up = bellman_update(&m, &v).unwrap();
        let down = bellman_update(&chain(Direction::Minimize), &v).unwrap();
        for (a, b) in up.values.iter().zip(&down.values) {
            assert!(a >= b);
        }
    }

    #[test]
    fn determinism() {
        let m = chain(Direction::Minimize);
        let a = value_iteration(&m, ValueTable::zeros(m.window()), 1e-8, 500).unwrap();
        let b = value_iteration(&m, ValueTable::zeros(m.window()), 1e-8, 500).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn document_round_trip() {
        let m = chain(Direction::Minimize);
        let (v, p) = value_iteration(&m, ValueTable::zeros(m.window()), 1e-8, 500).unwrap();
        let doc = SolutionDocument::new(&v, Some(&p));
        let text = serde_json::to_string(&doc).unwrap();
        assert!(text.starts_with("{\"window\":[-4,4],\"values\":["));
        assert!(text.contains("\"T\":"));
        let back: SolutionDocument = serde_json::from_str(&text).unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.stage_policy().unwrap().choices.len(), 9);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn table(vals: &[f64]) -> ValueTable {
            ValueTable {
                window: StateWindow { lo: -4, hi: 4 },
                values: vals.to_vec(),
                iteration_count: 0,
                residual_history: vec![],
            }
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn contraction(u in prop::collection::vec(-50.0f64..50.0, 9), w in prop::collection::vec(-50.0f64..50.0, 9)) {
                let m = chain(Direction::Minimize);
                let (u, w) = (table(&u), table(&w));
                let tu = bellman_update(&m, &u).unwrap();
                let tw = bellman_update(&m, &w).unwrap();
                prop_assert!(tu.sup_distance(&tw) <= m.contraction_factor() * u.sup_distance(&w) + 1e-8);
            }

            #[test]
            fn monotone(u in prop::collection::vec(-50.0f64..50.0, 9), bump in prop::collection::vec(0.0f64..10.0, 9)) {
                let m = chain(Direction::Minimize);
                let w: Vec<f64> = u.iter().zip(&bump).map(|(a, b)| a + b).collect();
                let tu = bellman_update(&m, &table(&u)).unwrap();
                let tw = bellman_update(&m, &table(&w)).unwrap();
                for (a, b) in tu.values.iter().zip(&tw.values) {
                    prop_assert!(*a <= *b + 1e-8);
                }
            }
        }
    }
}
