//! `mobility`: road-network embedding, region discovery and ride-sharing
//! simulation from the command line.
//!
//! Exit codes: 0 on success, 1 for invalid input or configuration, 2 for
//! internal failures.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use commands::Command;
use config::{RunConfig, UserError, KEYS_HELP};

#[derive(Parser)]
#[command(name = "mobility", version, about, after_help = KEYS_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic grid network to network.txt.
    GenNetwork(Common),
    /// Compute (or reuse) travel times and embed links; writes
    /// embedding.txt and stress.jsonl.
    Embed(Common),
    /// Cluster the embedding into regions; writes partition.txt and
    /// partition_report.json.
    Partition(Common),
    /// Compare DPGMM, k-means (embedded and geometric) and EM at equal K.
    BenchCluster(Common),
    /// Write a regional OD demand distribution and optionally requests.
    GenDemand(Common),
    /// Run the ride-sharing simulator for each policy and replication.
    Simulate(Common),
}

#[derive(Args)]
struct Common {
    /// Config file of flat `key = value` lines.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Output directory (same as `out_dir=...`).
    #[arg(short, long)]
    out_dir: Option<PathBuf>,
    /// Validate inputs and print the plan without running anything.
    #[arg(long)]
    dry_run: bool,
    /// `KEY=VALUE` overrides applied after the config file.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn run(cli: Cli) -> Result<()> {
    let (command, common) = match cli.command {
        Cmd::GenNetwork(c) => (Command::GenNetwork, c),
        Cmd::Embed(c) => (Command::Embed, c),
        Cmd::Partition(c) => (Command::Partition, c),
        Cmd::BenchCluster(c) => (Command::BenchCluster, c),
        Cmd::GenDemand(c) => (Command::GenDemand, c),
        Cmd::Simulate(c) => (Command::Simulate, c),
    };
    let mut overrides = common.overrides;
    if let Some(dir) = common.out_dir {
        overrides.push(format!(
            "out_dir={}",
            toml::Value::String(dir.display().to_string())
        ));
    }
    let cfg = RunConfig::load(common.config.as_deref(), &overrides)?;
    let plan = commands::plan(command, &cfg);
    plan.check()?;
    if common.dry_run {
        print!("{}", cfg.to_toml());
        println!();
        plan.print(&mut std::io::stdout())?;
        return Ok(());
    }
    std::fs::create_dir_all(&cfg.out_dir)
        .with_context(|| format!("cannot create output directory {}", cfg.out_dir.display()))?;
    std::fs::write(cfg.out("effective.conf"), cfg.to_toml())
        .with_context(|| format!("cannot write {}", cfg.out("effective.conf").display()))?;
    commands::execute(command, &cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UserError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
        Err(_) => {
            eprintln!(
                "error: internal failure (panic); please report this with the effective.conf"
            );
            ExitCode::from(2)
        }
    }
}
