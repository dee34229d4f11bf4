//! Monte-Carlo rollouts of the controlled jump processes.
//!
//! Inventory paths are simulated event by event: departures form a Poisson
//! process of rate `μ` and arrivals are obtained by thinning a rate-`ā̄`
//! Poisson process with acceptance probability `a/ā̄`. The state is constant
//! between events, so the discounted running cost is integrated exactly per
//! segment. Rollout `i` of seed `s` draws from its own ChaCha stream seeded
//! with [`rollout_seed`]`(s, i)`, which makes estimates independent of thread
//! count and lets rollouts be added without perturbing existing ones.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::StagePolicy;
use crate::error::{domain, Error, Result};
use crate::gated_queue::QueueParams;
use crate::inventory::{running_cost_const, InventoryParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Arrival,
    Departure,
    Observation,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Arrival => "arrival",
            EventKind::Departure => "departure",
            EventKind::Observation => "observation",
        }
    }
}

/// A jump of the state; `state` is the value after the jump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub time: f64,
    pub kind: EventKind,
    pub state: i64,
}

/// An observation epoch and the decision taken there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub time: f64,
    pub state: i64,
    pub action: f64,
    pub interval: f64,
}

/// One simulated path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub events: Vec<SimEvent>,
    pub observations: Vec<Observation>,
    pub discounted_cost: f64,
    pub seed: u64,
    /// Candidate arrivals drawn from the dominating process.
    pub proposals: u64,
    /// Candidates kept by thinning.
    pub accepted: u64,
}

impl SimTrace {
    /// CSV with columns `time,kind,state,action,interval`; jump rows leave the
    /// last two empty. Floats use the shortest round-trip representation.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "time,kind,state,action,interval")?;
        let (mut i, mut j) = (0, 0);
        while i < self.events.len() || j < self.observations.len() {
            let take_obs = match (self.events.get(i), self.observations.get(j)) {
                (Some(e), Some(o)) => o.time <= e.time,
                (None, Some(_)) => true,
                _ => false,
            };
            if take_obs {
                let o = &self.observations[j];
                writeln!(w, "{},observation,{},{},{}", o.time, o.state, o.action, o.interval)?;
                j += 1;
            } else {
                let e = &self.events[i];
                writeln!(w, "{},{},{},,", e.time, e.kind.as_str(), e.state)?;
                i += 1;
            }
        }
        Ok(())
    }
}

/// Mean and standard error of discounted rollout costs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_rollouts: usize,
    pub horizon: f64,
    /// Bound on the expected cost beyond the horizon.
    pub truncation_bound: f64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of rollout `index`: `splitmix64(seed ⊕ splitmix64(index))`.
pub fn rollout_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index))
}

/// `∫ₛᵉ βᵗ dt`.
fn discounted_length(s: f64, e: f64, ln_beta: f64) -> f64 {
    ((e * ln_beta).exp() - (s * ln_beta).exp()) / ln_beta
}

fn check_horizon(horizon: f64) -> Result<()> {
    if horizon > 0.0 && horizon.is_finite() {
        Ok(())
    } else {
        Err(domain("horizon", horizon))
    }
}

fn check_policy(policy: &StagePolicy, p: &InventoryParams) -> Result<()> {
    for (x, c) in policy.iter() {
        if !(c.interval > 0.0) || !(0.0..=p.a_max).contains(&c.action) {
            return Err(Error::InvalidParam {
                key: "policy",
                reason: format!("state {x}: action {} / interval {} out of range", c.action, c.interval),
            });
        }
    }
    Ok(())
}

fn run_inventory(
    x0: i64,
    policy: &StagePolicy,
    horizon: f64,
    seed: u64,
    p: &InventoryParams,
    record: bool,
) -> SimTrace {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let ln_beta = p.beta.ln();
    let total_rate = p.a_max + p.mu;
    let clock = Exp::new(total_rate).expect("a_max > 0");
    let mut trace = SimTrace {
        events: Vec::new(),
        observations: Vec::new(),
        discounted_cost: 0.0,
        seed,
        proposals: 0,
        accepted: 0,
    };
    let (mut t, mut x) = (0.0_f64, x0);
    while t < horizon {
        let choice = policy.clamped(x);
        let (a, big_t) = (choice.action, choice.interval);
        if record {
            trace.observations.push(Observation {
                time: t,
                state: x,
                action: a,
                interval: big_t,
            });
        }
        trace.discounted_cost += (t * ln_beta).exp() * p.observation_cost(big_t);
        let stop = (t + big_t).min(horizon);
        // cost is accrued per constant-state segment; rejected candidates
        // advance the clock without splitting the segment
        let mut seg_start = t;
        loop {
            // superposed clock for departures and candidate arrivals
            let next = t + clock.sample(&mut rng);
            if next >= stop {
                let dev = (x - p.theta) as f64;
                trace.discounted_cost += (dev * dev + p.nu * a) * discounted_length(seg_start, stop, ln_beta);
                t = stop;
                break;
            }
            t = next;
            let u: f64 = rng.random::<f64>() * total_rate;
            let (kind, step) = if u < p.mu {
                (EventKind::Departure, -1)
            } else {
                trace.proposals += 1;
                if u - p.mu >= a {
                    continue;
                }
                trace.accepted += 1;
                (EventKind::Arrival, 1)
            };
            let dev = (x - p.theta) as f64;
            trace.discounted_cost += (dev * dev + p.nu * a) * discounted_length(seg_start, t, ln_beta);
            seg_start = t;
            x += step;
            if record {
                trace.events.push(SimEvent { time: t, kind, state: x });
            }
        }
    }
    trace
}

/// Simulates the inventory under `policy` on `[0, horizon]`.
///
/// At every observation the policy's constant rate and interval for the
/// observed state (clamped to the policy window) are applied. The cost is
/// `∫₀ᴴ βᵗ[(X−θ)² + νa]dt + Σ β^{T̄ₖ} g(Tₖ)` over epochs starting before `H`.
pub fn simulate_inventory(
    x0: i64,
    policy: &StagePolicy,
    horizon: f64,
    seed: u64,
    p: &InventoryParams,
) -> Result<SimTrace> {
    p.validate()?;
    check_horizon(horizon)?;
    check_policy(policy, p)?;
    Ok(run_inventory(x0, policy, horizon, seed, p, true))
}

/// Fixed-shape pairwise sum, so the result depends only on the input order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n => {
            let (l, r) = xs.split_at(n / 2);
            pairwise_sum(l) + pairwise_sum(r)
        }
    }
}

/// Sample mean and standard error of the mean.
pub fn mean_and_std_error(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Upper bound on the magnitude of one stage's expected cost under `policy`
/// while the state stays in the policy window.
pub fn stage_cost_bound(policy: &StagePolicy, p: &InventoryParams) -> Result<f64> {
    let mut bound = 0.0_f64;
    for (x, c) in policy.iter() {
        let running = running_cost_const(c.action, c.interval, x, p)?;
        bound = bound.max(running + p.observation_cost(c.interval).abs());
    }
    Ok(bound)
}

/// Discounted-cost estimate from `n_rollouts` independent paths of length
/// `horizon`.
///
/// `truncation_bound = β^H · B / (1 − β^{T̲})` with `B` from
/// [`stage_cost_bound`]: every stage after the horizon starts at least `T̲`
/// after the previous one.
pub fn estimate_value(
    x0: i64,
    policy: &StagePolicy,
    n_rollouts: usize,
    horizon: f64,
    seed: u64,
    p: &InventoryParams,
) -> Result<RolloutEstimate> {
    p.validate()?;
    check_horizon(horizon)?;
    check_policy(policy, p)?;
    if n_rollouts < 2 {
        return Err(Error::InvalidParam {
            key: "n_rollouts",
            reason: format!("need at least 2, got {n_rollouts}"),
        });
    }
    let costs: Vec<f64> = (0..n_rollouts as u64)
        .into_par_iter()
        .map(|i| run_inventory(x0, policy, horizon, rollout_seed(seed, i), p, false).discounted_cost)
        .collect();
    let (mean, std_error) = mean_and_std_error(&costs);
    let tail = p.beta.powf(horizon) * stage_cost_bound(policy, p)? / (1.0 - p.beta.powf(p.t_min));
    Ok(RolloutEstimate {
        mean,
        std_error,
        n_rollouts,
        horizon,
        truncation_bound: tail,
    })
}

/// One gated cycle: `x_prev` inner-room customers served FCFS with
/// exponential service times of mean `1/a`, and `N ~ Poisson(λT)` outer-room
/// arrivals placed uniformly on `[0, T]`.
///
/// Returns the total waiting time (service completions for the inner room,
/// residual time to the gate for the outer room) and `N`.
pub fn simulate_gated_cycle(x_prev: u64, a: f64, t: f64, seed: u64, p: &QueueParams) -> Result<(f64, u64)> {
    if x_prev > 0 && !(a > 0.0) {
        return Err(domain("server speed", a));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(domain("cycle length", t));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut waiting = 0.0;
    if x_prev > 0 {
        let service = Exp::new(a).map_err(|_| domain("server speed", a))?;
        let mut completion = 0.0;
        for _ in 0..x_prev {
            completion += service.sample(&mut rng);
            waiting += completion;
        }
    }
    let mean = p.lambda * t;
    let n = if mean > 0.0 {
        Poisson::new(mean).map_err(|_| domain("poisson mean", mean))?.sample(&mut rng) as u64
    } else {
        0
    };
    for _ in 0..n {
        let arrival = rng.random::<f64>() * t;
        waiting += t - arrival;
    }
    Ok((waiting, n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{StageChoice, StateWindow};

    fn constant_policy(lo: i64, hi: i64, a: f64, t: f64) -> StagePolicy {
        let window = StateWindow::new(lo, hi).unwrap();
        StagePolicy {
            window,
            choices: vec![StageChoice { action: a, interval: t, value: 0.0 }; window.len()],
        }
    }

    #[test]
    fn frozen_state_cost_is_analytic() {
        let mut p = InventoryParams::reference();
        p.mu = 0.0;
        let policy = constant_policy(-5, 20, 0.0, 2.5);
        let h = 10.0;
        let tr = simulate_inventory(3, &policy, h, 1, &p).unwrap();
        assert!(tr.events.is_empty());
        let ln_b = p.beta.ln();
        let mut want = 25.0 * (p.beta.powf(h) - 1.0) / ln_b;
        for k in 0..4 {
            want += p.beta.powf(2.5 * k as f64) * p.observation_cost(2.5);
        }
        assert!((tr.discounted_cost - want).abs() < 1e-10 * want.abs(), "{} vs {want}", tr.discounted_cost);
        assert_eq!(tr.observations.len(), 4);

        let est = estimate_value(3, &policy, 8, h, 9, &p).unwrap();
        assert_eq!(est.std_error, 0.0);
        assert!((est.mean - want).abs() < 1e-10 * want.abs());
    }

    #[test]
    fn reproducible_traces() {
        let p = InventoryParams::reference();
        let policy = constant_policy(-20, 40, 2.3, 3.0);
        let a = simulate_inventory(8, &policy, 40.0, 42, &p).unwrap();
        let b = simulate_inventory(8, &policy, 40.0, 42, &p).unwrap();
        assert_eq!(a, b);
        let c = simulate_inventory(8, &policy, 40.0, 43, &p).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn trace_invariants() {
        let p = InventoryParams::reference();
        let policy = constant_policy(-20, 40, 3.1, 2.7);
        let tr = simulate_inventory(5, &policy, 50.0, 7, &p).unwrap();
        let mut prev_t = 0.0;
        let mut x = 5;
        for e in &tr.events {
            assert!(e.time > prev_t);
            let step = match e.kind {
                EventKind::Arrival => 1,
                EventKind::Departure => -1,
                EventKind::Observation => unreachable!(),
            };
            assert_eq!(e.state, x + step);
            x = e.state;
            prev_t = e.time;
        }
        for w in tr.observations.windows(2) {
            assert!((w[1].time - w[0].time - w[0].interval).abs() < 1e-9);
        }
        let arrivals = tr.events.iter().filter(|e| e.kind == EventKind::Arrival).count() as i64;
        let departures = tr.events.iter().filter(|e| e.kind == EventKind::Departure).count() as i64;
        assert_eq!(5 + arrivals - departures, x);
        assert_eq!(arrivals as u64, tr.accepted);
    }

    /// Midpoint sums with step ≤ 1e-3 inside each constant segment.
    fn riemann_cost(tr: &SimTrace, horizon: f64, p: &InventoryParams) -> f64 {
        let mut cuts: Vec<(f64, Option<i64>)> = tr.events.iter().map(|e| (e.time, Some(e.state))).collect();
        cuts.extend(tr.observations.iter().map(|o| (o.time, None)));
        cuts.push((horizon, None));
        cuts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (mut x, mut t0, mut total) = (tr.observations[0].state, 0.0, 0.0);
        let mut a = tr.observations[0].action;
        let mut obs = tr.observations.iter().peekable();
        for (t1, new_state) in cuts {
            let n = ((t1 - t0) / 1e-3).ceil().max(1.0) as usize;
            let h = (t1 - t0) / n as f64;
            let dev = (x - p.theta) as f64;
            for i in 0..n {
                let tm = t0 + (i as f64 + 0.5) * h;
                total += h * p.beta.powf(tm) * (dev * dev + p.nu * a);
            }
            t0 = t1;
            if let Some(s) = new_state {
                x = s;
            }
            while obs.peek().is_some_and(|o| o.time <= t1) {
                let o = obs.next().unwrap();
                a = o.action;
                total += p.beta.powf(o.time) * p.observation_cost(o.interval);
            }
        }
        total
    }

    #[test]
    fn exact_segments_match_riemann_sum() {
        let p = InventoryParams::reference();
        let policy = constant_policy(-20, 40, 2.6, 2.2);
        let tr = simulate_inventory(10, &policy, 15.0, 5, &p).unwrap();
        let r = riemann_cost(&tr, 15.0, &p);
        assert!((tr.discounted_cost - r).abs() < 1e-6, "{} vs {r}", tr.discounted_cost);
    }

    #[test]
    fn thinned_interarrivals_are_exponential() {
        // KS test against Exponential(a) at the 1% level
        let mut p = InventoryParams::reference();
        p.mu = 0.0;
        let a = 1.7;
        let policy = constant_policy(0, 100_000, a, 12.0);
        let tr = simulate_inventory(0, &policy, 6500.0, 11, &p).unwrap();
        let mut gaps: Vec<f64> = tr.events.windows(2).map(|w| w[1].time - w[0].time).take(10_000).collect();
        assert!(gaps.len() == 10_000, "only {} gaps", gaps.len());
        gaps.sort_by(f64::total_cmp);
        let n = gaps.len() as f64;
        let d = gaps
            .iter()
            .enumerate()
            .map(|(i, &g)| {
                let cdf = 1.0 - (-a * g).exp();
                (cdf - i as f64 / n).abs().max(((i + 1) as f64 / n - cdf).abs())
            })
            .fold(0.0, f64::max);
        assert!(d < 1.628 / n.sqrt(), "KS statistic {d}");
    }

    #[test]
    fn acceptance_ratio_matches_rate() {
        let p = InventoryParams::reference();
        let a = 1.2;
        let policy = constant_policy(-10_000, 10_000, a, 3.0);
        let tr = simulate_inventory(8, &policy, 4000.0, 3, &p).unwrap();
        let n = tr.proposals as f64;
        let ratio = tr.accepted as f64 / n;
        let q = a / p.a_max;
        assert!((ratio - q).abs() < 3.0 * (q * (1.0 - q) / n).sqrt(), "{ratio} vs {q}");
    }

    #[test]
    fn std_error_scales_with_sample_size() {
        let p = InventoryParams::reference();
        let policy = constant_policy(-30, 40, 2.0, 2.0);
        let e1 = estimate_value(8, &policy, 4000, 20.0, 1, &p).unwrap();
        let e2 = estimate_value(8, &policy, 8000, 20.0, 1, &p).unwrap();
        let r = e2.std_error / e1.std_error;
        assert!((r * 2f64.sqrt() - 1.0).abs() < 0.2, "ratio {r}");
    }

    #[test]
    fn seeds_are_index_hashed() {
        let s: Vec<u64> = (0..1000).map(|i| rollout_seed(5, i)).collect();
        let mut sorted = s.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), s.len());
        assert_eq!(rollout_seed(5, 17), s[17]);
    }

    #[test]
    fn gated_cycle_trivia() {
        let mut q = QueueParams::reference();
        q.lambda = 1e-300;
        assert_eq!(simulate_gated_cycle(0, 0.0, 3.0, 1, &q).unwrap(), (0.0, 0));
        assert!(simulate_gated_cycle(2, 0.0, 3.0, 1, &q).is_err());
    }

    #[test]
    fn gated_cycle_mean() {
        let q = QueueParams {
            lambda: 0.7,
            ..QueueParams::reference()
        };
        let (x, a, t) = (4, 1.5, 2.0);
        let w: Vec<f64> = (0..20_000).map(|i| simulate_gated_cycle(x, a, t, rollout_seed(2, i), &q).unwrap().0).collect();
        let (m, se) = mean_and_std_error(&w);
        let want = crate::gated_queue::expected_cycle_waiting_cost(x, a, t, &q).unwrap();
        assert!((m - want).abs() < 3.0 * se, "{m} ± {se} vs {want}");
    }

    #[test]
    fn pairwise_sum_basics() {
        assert_eq!(pairwise_sum(&[]), 0.0);
        assert_eq!(pairwise_sum(&[1.0, 2.0, 3.0]), 6.0);
    }
}
