use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use jumpobs_cli::{cmd_simulate, cmd_solve, cmd_sweep, CliError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "jumpobs", version, about = "Solve and simulate jump MDPs with controlled observation epochs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration: inventory-reference or gated-default.
    #[arg(long)]
    preset: Option<String>,
    /// Output directory (overrides [output] dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Simulation seed (overrides [simulation] seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 lets rayon decide.
    #[arg(long, env = "JUMPOBS_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Value iteration; writes value_table.json, policy.csv, residuals.csv.
    Solve(Common),
    /// Rollouts under a solved policy; writes trace.csv and estimate.json.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Policy document, by default <out>/value_table.json.
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Start state (overrides [simulation] x0).
        #[arg(long)]
        x0: Option<i64>,
    },
    /// One solve per value of a numeric key; writes sweep.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Dotted key such as inventory.kappa.
        #[arg(long)]
        key: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
}

fn prepare(c: &Common) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let mut cfg = match (&c.config, &c.preset) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        (None, None) => return Err(CliError::Config("pass --config PATH or --preset NAME".into())),
    };
    if let Some(seed) = c.seed {
        cfg.simulation.seed = seed;
    }
    if let Some(n) = c.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    let out = c.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    Ok((cfg, out))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Solve(common) => {
            let (cfg, out) = prepare(&common)?;
            let solved = cmd_solve(&cfg, &out)?;
            eprintln!(
                "converged after {} iterations; wrote {}",
                solved.residuals.len(),
                out.display()
            );
        }
        Command::Simulate { common, policy, x0 } => {
            let (mut cfg, out) = prepare(&common)?;
            if let Some(x0) = x0 {
                cfg.simulation.x0 = x0;
            }
            let policy = policy.unwrap_or_else(|| out.join("value_table.json"));
            let r = cmd_simulate(&cfg, &policy, &out)?;
            eprintln!(
                "x0 = {}: rollout mean {:.6} ± {:.6} (truncation ≤ {:.2e}), v* = {:.6}",
                r.x0, r.estimate.mean, r.estimate.std_error, r.estimate.truncation_bound, r.v_star
            );
        }
        Command::Sweep { common, key, values } => {
            let (cfg, out) = prepare(&common)?;
            let rows = cmd_sweep(&cfg, &key, &values, &out)?;
            let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
            eprintln!("{} points, {failed} failed; wrote {}", rows.len(), out.join("sweep.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
