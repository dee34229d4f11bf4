//! Experiment configuration: TOML with one section per concern.
//!
//! ```toml
//! model = "inventory"        # or "gated-queue"
//! [inventory]                # InventoryParams
//! [queue]                    # QueueParams, with [queue.g] kind/kappa
//! [solver]                   # max_iter, grid_a, grid_t, refine_tol, window_margin, eps_fixed_point
//! [simulation]               # x0, n_rollouts, horizon, trace_horizon, seed
//! [output]                   # dir
//! ```
//!
//! Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use jumpobs::gated_queue::QueueParams;
use jumpobs::inventory::InventoryParams;
use jumpobs::optimize::SearchConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

const PRESETS: &[(&str, &str)] = &[
    ("inventory-reference", include_str!("../presets/inventory-reference.toml")),
    ("gated-default", include_str!("../presets/gated-default.toml")),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Inventory,
    GatedQueue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_grid")]
    pub grid_a: usize,
    #[serde(default = "default_grid")]
    pub grid_t: usize,
    #[serde(default = "default_refine_tol")]
    pub refine_tol: f64,
    /// Inventory window half-width around θ; derived from the kernel
    /// truncation when absent.
    #[serde(default)]
    pub window_margin: Option<i64>,
    /// Stopping tolerance of the gated-queue scalar fixed point.
    #[serde(default = "default_eps_fixed_point")]
    pub eps_fixed_point: f64,
}

fn default_max_iter() -> usize {
    500
}
fn default_grid() -> usize {
    41
}
fn default_refine_tol() -> f64 {
    1e-6
}
fn default_eps_fixed_point() -> f64 {
    1e-12
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iter: default_max_iter(),
            grid_a: default_grid(),
            grid_t: default_grid(),
            refine_tol: default_refine_tol(),
            window_margin: None,
            eps_fixed_point: default_eps_fixed_point(),
        }
    }
}

impl SolverConfig {
    pub fn search(&self) -> SearchConfig {
        SearchConfig {
            grid_a: self.grid_a,
            grid_t: self.grid_t,
            tol: self.refine_tol,
            ..SearchConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default)]
    pub x0: i64,
    #[serde(default = "default_rollouts")]
    pub n_rollouts: usize,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// Length of the single path written to trace.csv.
    #[serde(default = "default_trace_horizon")]
    pub trace_horizon: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_rollouts() -> usize {
    10_000
}
fn default_horizon() -> f64 {
    60.0
}
fn default_trace_horizon() -> f64 {
    30.0
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            x0: 0,
            n_rollouts: default_rollouts(),
            horizon: default_horizon(),
            trace_horizon: default_trace_horizon(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: default_out() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inventory: Option<InventoryParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queue: Option<QueueParams>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn config_error(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| config_error(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn preset(name: &str) -> Result<Self, CliError> {
        let text = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| {
                config_error(format!(
                    "unknown preset `{name}` (available: {})",
                    preset_names().collect::<Vec<_>>().join(", ")
                ))
            })?;
        Self::from_toml(text)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml(&text)
    }

    pub fn inventory(&self) -> Result<&InventoryParams, CliError> {
        self.inventory
            .as_ref()
            .ok_or_else(|| config_error("model = \"inventory\" needs an [inventory] section"))
    }

    pub fn queue(&self) -> Result<&QueueParams, CliError> {
        self.queue
            .as_ref()
            .ok_or_else(|| config_error("model = \"gated-queue\" needs a [queue] section"))
    }

    /// Checks parameter bounds; errors name the offending key.
    pub fn validate(&self) -> Result<(), CliError> {
        match self.model {
            ModelKind::Inventory => self.inventory()?.validate().map_err(|e| config_error(format!("[inventory] {e}")))?,
            ModelKind::GatedQueue => self.queue()?.validate().map_err(|e| config_error(format!("[queue] {e}")))?,
        }
        let s = &self.solver;
        if s.max_iter == 0 {
            return Err(config_error("[solver] max_iter must be ≥ 1"));
        }
        if s.grid_a == 0 || s.grid_t == 0 {
            return Err(config_error("[solver] grid_a and grid_t must be ≥ 1"));
        }
        if !(s.refine_tol > 0.0) {
            return Err(config_error("[solver] refine_tol must be > 0"));
        }
        if let Some(m) = s.window_margin {
            if m < 0 {
                return Err(config_error(format!("[solver] window_margin must be ≥ 0, got {m}")));
            }
        }
        if !(s.eps_fixed_point > 0.0) {
            return Err(config_error("[solver] eps_fixed_point must be > 0"));
        }
        let sim = &self.simulation;
        if sim.n_rollouts < 2 {
            return Err(config_error("[simulation] n_rollouts must be ≥ 2"));
        }
        if !(sim.horizon > 0.0 && sim.horizon.is_finite()) {
            return Err(config_error("[simulation] horizon must be finite and > 0"));
        }
        if !(sim.trace_horizon > 0.0 && sim.trace_horizon.is_finite()) {
            return Err(config_error("[simulation] trace_horizon must be finite and > 0"));
        }
        Ok(())
    }

    /// Copy with the numeric key `section.name` (or `section.sub.name`) set
    /// to `value`.
    pub fn with_value(&self, key: &str, value: f64) -> Result<Self, CliError> {
        let mut doc = toml::Value::try_from(self).map_err(|e| config_error(e.to_string()))?;
        let parts: Vec<&str> = key.split('.').collect();
        let (last, path) = parts.split_last().ok_or_else(|| config_error("empty sweep key"))?;
        let mut table = doc
            .as_table_mut()
            .ok_or_else(|| config_error("configuration is not a table"))?;
        for part in path {
            table = table
                .get_mut(*part)
                .and_then(|v| v.as_table_mut())
                .ok_or_else(|| config_error(format!("unknown sweep key `{key}`")))?;
        }
        let slot = table
            .get_mut(*last)
            .ok_or_else(|| config_error(format!("unknown sweep key `{key}`")))?;
        *slot = match slot {
            toml::Value::Float(_) => toml::Value::Float(value),
            toml::Value::Integer(_) if value.fract() == 0.0 && value.abs() < 9.0e15 => toml::Value::Integer(value as i64),
            toml::Value::Integer(_) => {
                return Err(config_error(format!("sweep key `{key}` takes integers, got {value}")));
            }
            _ => return Err(config_error(format!("sweep key `{key}` is not numeric"))),
        };
        let cfg: ExperimentConfig = doc.try_into().map_err(|e: toml::de::Error| config_error(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
