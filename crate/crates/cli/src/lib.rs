//! Experiment runner behind the `jumpobs` binary.
//!
//! [`cmd_solve`], [`cmd_simulate`] and [`cmd_sweep`] read an
//! [`ExperimentConfig`] and write plot-ready CSV/JSON files. Every file is
//! written to a temporary sibling and renamed into place.

use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use jumpobs::engine::{value_iteration_with, SolutionDocument, StageChoice, StagePolicy, StateWindow, ValueTable};
use jumpobs::gated_queue::{self, QueueSolution};
use jumpobs::inventory::InventoryModel;
use jumpobs::simulator::{estimate_value, simulate_inventory, RolloutEstimate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod config;

pub use config::{ExperimentConfig, ModelKind};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("solver failed: {0}")]
    Solver(jumpobs::Error),

    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    /// 2 configuration, 3 solver, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Io { .. } => 4,
        }
    }
}

impl From<jumpobs::Error> for CliError {
    fn from(e: jumpobs::Error) -> Self {
        match e {
            jumpobs::Error::InvalidParam { .. } | jumpobs::Error::OutsideWindow { .. } => CliError::Config(e.to_string()),
            other => CliError::Solver(other),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, body: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), CliError> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        body(&mut w).map_err(io_err(path))?;
        w.flush().map_err(io_err(path))?;
    }
    tmp.persist(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

fn write_csv_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), CliError> {
    write_atomic(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(header)?;
        for row in rows {
            out.write_record(&row)?;
        }
        out.flush()
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)
    })
}

/// Converged values and policy of either model.
#[derive(Debug, Clone)]
pub struct Solved {
    pub values: ValueTable,
    pub policy: StagePolicy,
    pub residuals: Vec<f64>,
    pub queue: Option<QueueSolution>,
}

impl Solved {
    /// State reported as "θ" in sweeps: the target for the inventory, 0 for
    /// the queue.
    fn reference_state(cfg: &ExperimentConfig) -> i64 {
        match cfg.model {
            ModelKind::Inventory => cfg.inventory.as_ref().map_or(0, |p| p.theta),
            ModelKind::GatedQueue => 0,
        }
    }
}

/// Failure of [`solve`]: the error plus whatever residuals were recorded.
#[derive(Debug)]
pub struct SolveFailure {
    pub error: CliError,
    pub residuals: Vec<f64>,
}

impl From<CliError> for SolveFailure {
    fn from(error: CliError) -> Self {
        SolveFailure {
            error,
            residuals: Vec::new(),
        }
    }
}

fn solve_inventory(cfg: &ExperimentConfig) -> Result<Solved, SolveFailure> {
    let params = cfg.inventory()?.clone();
    let eps = params.eps_vi;
    let model = InventoryModel::new(params.clone(), cfg.solver.window_margin, cfg.solver.search()).map_err(CliError::from)?;
    let v0 = params.initial_values(jumpobs::engine::ObservationMdp::window(&model));
    match value_iteration_with(&model, v0, eps, cfg.solver.max_iter, |_, _| {}) {
        Ok((values, policy)) => Ok(Solved {
            residuals: values.residual_history.clone(),
            values,
            policy,
            queue: None,
        }),
        Err(jumpobs::Error::NotConverged {
            iterations,
            residual,
            residual_history,
        }) => Err(SolveFailure {
            error: CliError::Solver(jumpobs::Error::NotConverged {
                iterations,
                residual,
                residual_history: Vec::new(),
            }),
            residuals: residual_history,
        }),
        Err(e) => Err(CliError::from(e).into()),
    }
}

fn solve_queue(cfg: &ExperimentConfig) -> Result<Solved, SolveFailure> {
    let p = cfg.queue()?;
    let sol = match gated_queue::solve_epoch_fixed_point(p, cfg.solver.eps_fixed_point, cfg.solver.max_iter) {
        Ok(sol) => sol,
        Err(jumpobs::Error::NotConverged {
            iterations,
            residual,
            residual_history,
        }) => {
            return Err(SolveFailure {
                error: CliError::Solver(jumpobs::Error::NotConverged {
                    iterations,
                    residual,
                    residual_history: Vec::new(),
                }),
                residuals: residual_history,
            })
        }
        Err(e) => return Err(CliError::from(e).into()),
    };
    let window = StateWindow::new(0, sol.n_trunc as i64).map_err(CliError::from)?;
    let rows = sol.rows(p);
    let values = ValueTable {
        window,
        values: rows.iter().map(|r| r.v).collect(),
        iteration_count: sol.iterations,
        residual_history: sol.residual_history.clone(),
    };
    let policy = StagePolicy {
        window,
        choices: rows
            .iter()
            .map(|r| StageChoice {
                action: r.a_star,
                interval: sol.t_star,
                value: r.v,
            })
            .collect(),
    };
    Ok(Solved {
        values,
        policy,
        residuals: sol.residual_history.clone(),
        queue: Some(sol),
    })
}

/// Solves the configured model in memory.
pub fn solve(cfg: &ExperimentConfig) -> Result<Solved, SolveFailure> {
    cfg.validate()?;
    match cfg.model {
        ModelKind::Inventory => solve_inventory(cfg),
        ModelKind::GatedQueue => solve_queue(cfg),
    }
}

fn write_residuals(path: &Path, residuals: &[f64]) -> Result<(), CliError> {
    write_csv_rows(
        path,
        &["iteration", "sup_norm_residual"],
        residuals.iter().enumerate().map(|(i, r)| vec![(i + 1).to_string(), r.to_string()]),
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct QueueSummary {
    w_star: f64,
    t_star: f64,
    n_trunc: u64,
    rows: Vec<gated_queue::QueueRow>,
}

/// Writes `value_table.json`, `policy.csv` and `residuals.csv` (plus
/// `queue_solution.json` for the gated queue) into `out`.
///
/// On non-convergence the residual history is still written.
pub fn cmd_solve(cfg: &ExperimentConfig, out: &Path) -> Result<Solved, CliError> {
    let solved = match solve(cfg) {
        Ok(s) => s,
        Err(f) => {
            if !f.residuals.is_empty() {
                write_residuals(&out.join("residuals.csv"), &f.residuals)?;
            }
            return Err(f.error);
        }
    };
    write_json(&out.join("value_table.json"), &SolutionDocument::new(&solved.values, Some(&solved.policy)))?;
    write_csv_rows(
        &out.join("policy.csv"),
        &["x", "v_star", "a_star", "T_star"],
        solved.policy.iter().map(|(x, c)| {
            vec![
                x.to_string(),
                solved.values.get(x).unwrap_or(c.value).to_string(),
                c.action.to_string(),
                c.interval.to_string(),
            ]
        }),
    )?;
    write_residuals(&out.join("residuals.csv"), &solved.residuals)?;
    if let (Some(sol), Ok(p)) = (&solved.queue, cfg.queue()) {
        let summary = QueueSummary {
            w_star: sol.w_star,
            t_star: sol.t_star,
            n_trunc: sol.n_trunc,
            rows: sol.rows(p),
        };
        write_json(&out.join("queue_solution.json"), &summary)?;
    }
    Ok(solved)
}

/// Contents of `estimate.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub x0: i64,
    pub seed: u64,
    #[serde(flatten)]
    pub estimate: RolloutEstimate,
    /// Solved value at `x0`.
    pub v_star: f64,
    pub abs_error: f64,
    /// `|mean − v*| ≤ 3·std_error + truncation_bound`.
    pub within_tolerance: bool,
}

/// Reads a policy document written by [`cmd_solve`].
pub fn load_solution(path: &Path) -> Result<SolutionDocument, CliError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Simulates the inventory from `simulation.x0` under the policy in
/// `policy_file`, writing `trace.csv` and `estimate.json` into `out`.
pub fn cmd_simulate(cfg: &ExperimentConfig, policy_file: &Path, out: &Path) -> Result<EstimateReport, CliError> {
    cfg.validate()?;
    if cfg.model != ModelKind::Inventory {
        return Err(CliError::Config("simulate supports model = \"inventory\" only".into()));
    }
    let p = cfg.inventory()?;
    let doc = load_solution(policy_file)?;
    let policy = doc.stage_policy()?;
    let sim = &cfg.simulation;
    let x0 = sim.x0;
    let v_star = doc.value_table().get(x0).ok_or(CliError::Config(format!(
        "start state {x0} lies outside the policy window [{}, {}]",
        doc.window.lo, doc.window.hi
    )))?;
    let trace = simulate_inventory(x0, &policy, sim.trace_horizon, sim.seed, p)?;
    write_atomic(&out.join("trace.csv"), |w| trace.write_csv(w))?;
    let estimate = estimate_value(x0, &policy, sim.n_rollouts, sim.horizon, sim.seed, p)?;
    let abs_error = (estimate.mean - v_star).abs();
    let report = EstimateReport {
        x0,
        seed: sim.seed,
        estimate,
        v_star,
        abs_error,
        within_tolerance: abs_error <= 3.0 * estimate.std_error + estimate.truncation_bound,
    };
    write_json(&out.join("estimate.json"), &report)?;
    Ok(report)
}

/// One row of `sweep.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub outcome: Result<SweepPoint, String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub v_ref: f64,
    pub t_ref: f64,
    pub a_min: f64,
    pub a_max: f64,
}

/// One solve per value of `key`; failures are recorded in the `error`
/// column and the sweep continues. The "θ" columns refer to state 0 for the
/// gated queue.
pub fn cmd_sweep(cfg: &ExperimentConfig, key: &str, values: &[f64], out: &Path) -> Result<Vec<SweepRow>, CliError> {
    cfg.validate()?;
    if values.is_empty() {
        return Err(CliError::Config("sweep needs at least one value".into()));
    }
    // reject bad keys before solving anything
    cfg.with_value(key, values[0])?;
    let rows: Vec<SweepRow> = values
        .iter()
        .map(|&value| {
            let outcome = cfg
                .with_value(key, value)
                .map_err(|e| e.to_string())
                .and_then(|c| {
                    let solved = solve(&c).map_err(|f| f.error.to_string())?;
                    let x_ref = Solved::reference_state(&c);
                    let choice = solved
                        .policy
                        .get(x_ref)
                        .ok_or_else(|| format!("state {x_ref} outside the solved window"))?;
                    let (a_min, a_max) = solved
                        .policy
                        .choices
                        .iter()
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| (lo.min(c.action), hi.max(c.action)));
                    Ok(SweepPoint {
                        v_ref: solved.values.get(x_ref).unwrap_or(choice.value),
                        t_ref: choice.interval,
                        a_min,
                        a_max,
                    })
                });
            SweepRow { value, outcome }
        })
        .collect();
    let header = [key, "v_star_theta", "T_star_theta", "a_star_min", "a_star_max", "error"];
    write_csv_rows(
        &out.join("sweep.csv"),
        &header,
        rows.iter().map(|r| match &r.outcome {
            Ok(p) => vec![
                r.value.to_string(),
                p.v_ref.to_string(),
                p.t_ref.to_string(),
                p.a_min.to_string(),
                p.a_max.to_string(),
                String::new(),
            ],
            Err(e) => vec![r.value.to_string(), String::new(), String::new(), String::new(), String::new(), e.clone()],
        }),
    )?;
    Ok(rows)
}
