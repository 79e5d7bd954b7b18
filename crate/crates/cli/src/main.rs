//! `iioss-lab`: load a config, run one verification subcommand, emit
//! reports and CSV tables.
//!
//! Exit codes: 0 = all checks passed / no violation found, 1 = a violation
//! was found (witness emitted), 2 = configuration or evaluation error.

mod commands;
mod config;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};
use commands::RunMeta;
use config::RunConfig;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "iioss-lab",
    version,
    about = "Simulate nonlinear systems with outputs and check, falsify, or construct integral-detectability certificates"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Config file (alternative to the positional argument).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<String>,

    /// Override the sampling seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the candidate/sample budget.
    #[arg(long, global = true)]
    budget: Option<usize>,

    /// Override the integration step.
    #[arg(long, global = true)]
    dt: Option<f64>,

    /// Override the run horizon.
    #[arg(long, global = true)]
    horizon: Option<f64>,

    /// Worker threads for sample loops (default: all cores; env
    /// IIOSS_LAB_JOBS as fallback). Results do not depend on this.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Output directory for reports and CSV files.
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,

    /// Report format (json reports always; csv tables where applicable).
    #[arg(long, global = true, value_parser = ["json", "csv"])]
    format: Option<String>,

    /// Initial state override, comma separated.
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    xi: Option<Vec<f64>>,

    /// Replace the dynamics with these expressions (repeat per component).
    #[arg(
        long,
        global = true,
        value_name = "EXPR",
        action = clap::ArgAction::Append,
        allow_hyphen_values = true
    )]
    dynamics: Vec<String>,

    /// Replace the output map with these expressions (repeat per component).
    #[arg(
        long,
        global = true,
        value_name = "EXPR",
        action = clap::ArgAction::Append,
        allow_hyphen_values = true
    )]
    output: Vec<String>,

    /// Replace one gain expression, e.g. `--gain gamma2=s^2`.
    #[arg(long, global = true, value_name = "NAME=EXPR", action = clap::ArgAction::Append)]
    gain: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the configured system and write the trajectory CSV.
    Simulate { config: Option<String> },
    /// Check the trajectory bound (both integral forms) on sampled runs.
    CheckIioss { config: Option<String> },
    /// Randomized counterexample search against the configured gains.
    Falsify { config: Option<String> },
    /// Run the norm observer alongside sampled trajectories.
    Observe { config: Option<String> },
    /// Check a Lyapunov candidate: sandwich, both decrease forms, agreement.
    CheckLyapunov { config: Option<String> },
    /// Turn a passing certificate into a trajectory bound and verify it.
    Sufficiency { config: Option<String> },
    /// Build and gate a KL decay bound for a comparison rate.
    Compare { config: Option<String> },
    /// Estimate the value-function construction at sampled states.
    EstimateV0 { config: Option<String> },
    /// Tabulate settling times of a KL function and check monotonicity.
    Settle { config: Option<String> },
    /// List the built-in benchmark systems.
    ListBenchmarks,
}

impl Command {
    fn positional_config(&self) -> Option<&String> {
        match self {
            Command::Simulate { config }
            | Command::CheckIioss { config }
            | Command::Falsify { config }
            | Command::Observe { config }
            | Command::CheckLyapunov { config }
            | Command::Sufficiency { config }
            | Command::Compare { config }
            | Command::EstimateV0 { config }
            | Command::Settle { config } => config.as_ref(),
            Command::ListBenchmarks => None,
        }
    }
}

/// A config argument is either a file path or a registry name; registry
/// names get a minimal synthesized config.
fn load_config_text(arg: &str) -> Result<String> {
    let path = Path::new(arg);
    if path.exists() {
        return std::fs::read_to_string(path).with_context(|| format!("reading {arg}"));
    }
    if iioss_core::benchmarks::names().contains(&arg) {
        return Ok(format!("{{\"system\": {{\"benchmark\": \"{arg}\"}}}}"));
    }
    Err(anyhow!(
        "`{arg}` is neither a config file nor a benchmark name"
    ))
}

fn apply_overrides(cfg: &mut RunConfig, cli: &Cli, overrides: &mut BTreeMap<String, String>) {
    if let Some(seed) = cli.seed {
        cfg.sampling.seed = seed;
        overrides.insert("seed".into(), seed.to_string());
    }
    if let Some(budget) = cli.budget {
        cfg.sampling.budget = budget;
        overrides.insert("budget".into(), budget.to_string());
    }
    if let Some(dt) = cli.dt {
        cfg.sampling.dt = dt;
        overrides.insert("dt".into(), dt.to_string());
    }
    if let Some(horizon) = cli.horizon {
        cfg.sampling.horizon = horizon;
        overrides.insert("horizon".into(), horizon.to_string());
    }
    if let Some(xi) = &cli.xi {
        cfg.sampling.xi = Some(xi.clone());
        overrides.insert(
            "xi".into(),
            xi.iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
    }
    if let Some(dir) = &cli.out_dir {
        cfg.outputs.out_dir = dir.display().to_string();
        overrides.insert("out_dir".into(), cfg.outputs.out_dir.clone());
    }
    if let Some(fmt) = &cli.format {
        cfg.outputs.format = fmt.clone();
        overrides.insert("format".into(), fmt.clone());
    }
    if !cli.dynamics.is_empty() {
        cfg.system.dynamics = cli.dynamics.clone();
        overrides.insert("dynamics".into(), cli.dynamics.join("; "));
    }
    if !cli.output.is_empty() {
        cfg.system.output = cli.output.clone();
        overrides.insert("output".into(), cli.output.join("; "));
    }
    for spec in &cli.gain {
        if let Some((name, expr)) = spec.split_once('=') {
            cfg.gain_overrides
                .push((name.trim().to_string(), expr.trim().to_string()));
            overrides.insert(format!("gain.{}", name.trim()), expr.trim().to_string());
        } else {
            cfg.gain_overrides.push((spec.clone(), String::new()));
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    if let Command::ListBenchmarks = cli.command {
        commands::list_benchmarks()?;
        return Ok(false);
    }

    let jobs = cli.jobs.or_else(|| {
        std::env::var("IIOSS_LAB_JOBS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(jobs) = jobs {
        // ignore failure: the pool may already exist in-process
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }

    let config_arg = cli
        .command
        .positional_config()
        .or(cli.config.as_ref())
        .ok_or_else(|| anyhow!("a config file or benchmark name is required"))?
        .clone();
    let text = load_config_text(&config_arg)?;
    let config_hash = hex::encode(Sha256::digest(text.as_bytes()));
    let mut cfg = RunConfig::parse_str(&text)?;
    let mut overrides = BTreeMap::new();
    apply_overrides(&mut cfg, &cli, &mut overrides);
    let out_dir = commands::ensure_out_dir(Path::new(&cfg.outputs.out_dir))?;
    let meta = RunMeta {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash,
        seed: cfg.sampling.seed,
        overrides,
    };
    let resolved = cfg.resolve()?;

    let outcome = match &cli.command {
        Command::Simulate { .. } => commands::simulate(&resolved, &meta, &out_dir)?,
        Command::CheckIioss { .. } => commands::check_iioss(&resolved, &meta, &out_dir)?,
        Command::Falsify { .. } => commands::falsify(&resolved, &meta, &out_dir)?,
        Command::Observe { .. } => commands::observe(&resolved, &meta, &out_dir)?,
        Command::CheckLyapunov { .. } => commands::check_lyapunov(&resolved, &meta, &out_dir)?,
        Command::Sufficiency { .. } => commands::sufficiency(&resolved, &meta, &out_dir)?,
        Command::Compare { .. } => commands::compare_cmd(&resolved, &meta, &out_dir)?,
        Command::EstimateV0 { .. } => commands::estimate_v0(&resolved, &meta, &out_dir)?,
        Command::Settle { .. } => commands::settle(&resolved, &meta, &out_dir)?,
        Command::ListBenchmarks => unreachable!(),
    };
    Ok(outcome.violation)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
