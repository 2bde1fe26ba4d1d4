//! `lvfront`: run configured experiments from the command line.
//!
//! Exit codes: 0 success, 1 config error, 2 numerical failure, 3 failed check.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use lvfront::config::{parse_config, preset, preset_names, ExperimentConfig};
use lvfront::experiment::{run_task, RunManifest, Task};

#[derive(Parser)]
#[command(
    name = "lvfront",
    version,
    about = "Invasion fronts of the Lotka-Volterra competition-diffusion system"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the PDE and every analysis requested in the config.
    Simulate(Common),
    /// Solve the bistable front.
    Wave(Common),
    /// Canonical speeds and characteristic roots.
    Roots(Common),
    /// Check the residual signs of the [supersub] pair.
    SupersubVerify(Common),
    /// Run the PDE and fit the logarithmic front lag.
    Bramson(Common),
    /// Run the PDE and look for a propagating terrace.
    Terrace(Common),
    /// Run every row of the [sweep] section.
    Sweep(Common),
    /// Certify that the initial data dominate a validated lower pair.
    CertifyInvasion(Common),
    /// Print a shipped preset.
    Preset { name: String },
}

#[derive(Args)]
struct Common {
    /// Config file (TOML, or JSON when it starts with '{').
    #[arg(long, value_name = "PATH", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Shipped preset: theorem1, theorem2, theorem3, appendix or kpp.
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Output directory; defaults to [output].dir, then out/<run_id>.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Seed for randomized sweeps.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads for the parallel loops.
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
}

enum Failure {
    Config(anyhow::Error),
    Numerical(anyhow::Error),
}

fn load(c: &Common, task: Task) -> Result<(ExperimentConfig, PathBuf), Failure> {
    let text = match (&c.config, &c.preset) {
        (Some(p), _) => std::fs::read_to_string(p)
            .with_context(|| format!("reading {}", p.display()))
            .map_err(Failure::Config)?,
        (None, Some(name)) => match preset(name) {
            Some(t) => t.to_string(),
            None => {
                return Err(Failure::Config(anyhow::anyhow!(
                    "unknown preset {name:?}; available: {}",
                    preset_names().join(", ")
                )))
            }
        },
        (None, None) => {
            return Err(Failure::Config(anyhow::anyhow!(
                "pass --config PATH or --preset NAME"
            )))
        }
    };
    let mut cfg = parse_config(&text).map_err(|e| Failure::Config(e.into()))?;
    if let Some(s) = c.seed {
        cfg.output.seed = s;
    }
    let adjusted = task.adjust(&cfg);
    adjusted.validate().map_err(|e| Failure::Config(e.into()))?;
    if task == Task::Sweep && cfg.sweep.is_none() {
        return Err(Failure::Config(anyhow::anyhow!(
            "the config has no [sweep] section"
        )));
    }
    let out = c
        .out
        .clone()
        .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out").join(&cfg.output.run_id));
    Ok((cfg, out))
}

fn report(m: &RunManifest, out: &std::path::Path) {
    println!("run {} ({:?}): {:?}", m.run_id, m.task, m.status);
    for c in &m.checks {
        println!(
            "  [{}] {} = {:.6e} ({})",
            if c.pass { "pass" } else { "FAIL" },
            c.name,
            c.value,
            c.rule
        );
    }
    for w in &m.warnings {
        println!("  warning: {w}");
    }
    for e in &m.errors {
        println!("  error: {e}");
    }
    println!("  {} files in {}", m.files.len(), out.display());
}

fn run(c: &Common, task: Task) -> Result<u8, Failure> {
    if let Some(n) = c.threads {
        if !lvfront::par::set_threads(n) {
            log::warn!("thread count not applied (sequential build or pool already set)");
        }
    }
    let (cfg, out) = load(c, task)?;
    let m = run_task(&cfg, task, &out)
        .with_context(|| format!("writing to {}", out.display()))
        .map_err(Failure::Numerical)?;
    report(&m, &out);
    Ok(m.exit_code() as u8)
}

fn main() -> anyhow::Result<ExitCode> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (common, task) = match &cli.command {
        Command::Simulate(c) => (c, Task::Simulate),
        Command::Wave(c) => (c, Task::Wave),
        Command::Roots(c) => (c, Task::Roots),
        Command::SupersubVerify(c) => (c, Task::SupersubVerify),
        Command::Bramson(c) => (c, Task::Bramson),
        Command::Terrace(c) => (c, Task::Terrace),
        Command::Sweep(c) => (c, Task::Sweep),
        Command::CertifyInvasion(c) => (c, Task::CertifyInvasion),
        Command::Preset { name } => match preset(name) {
            Some(t) => {
                print!("{t}");
                return Ok(ExitCode::SUCCESS);
            }
            None => bail!(
                "unknown preset {name:?}; available: {}",
                preset_names().join(", ")
            ),
        },
    };
    Ok(match run(common, task) {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(e)) => {
            eprintln!("failure: {e:#}");
            ExitCode::from(2)
        }
    })
}
