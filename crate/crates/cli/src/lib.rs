//! Command-line front end: configuration, orchestration and artifacts.

pub mod commands;
pub mod config;
pub mod export;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use log::error;
use qse_core::Error;

use commands::Command;
use config::{parse_deltas, rod_preset, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "qse", version, about = "Discrete quasistatic evolutions, jump measures and actions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Run the evolution for every δ and write trajectory, μ and balance artifacts.
    Evolve(Common),
    /// Evolve every δ and add the cross-δ diagnostics.
    Sweep(Common),
    /// Estimate the gradient-flow, minimizing-movement and BDF2 actions between two states.
    Action(Common),
    /// Run the inequality, balance and jump suites.
    Verify(Common),
    /// Rod fracture sweep with key frames.
    Rod(Common),
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Comma-separated δ list, e.g. `1/15,1/30`.
    #[arg(long)]
    pub delta: Option<String>,
}

/// Exit status of a subcommand: 0 pass, 1 runtime failure, 2 config error.
pub fn exit_code(result: &qse_core::Result<commands::Outcome>) -> i32 {
    match result {
        Ok(o) if o.passed => 0,
        Ok(_) => 1,
        Err(Error::Config(_)) | Err(Error::Precondition(_)) => 2,
        Err(_) => 1,
    }
}

fn prepare(command: Command, args: &Common) -> qse_core::Result<RunConfig> {
    let mut config = match &args.config {
        Some(path) => RunConfig::from_file(path)?,
        None if command == Command::Rod => rod_preset(),
        None => RunConfig::default(),
    };
    if let Some(out) = &args.out {
        config.output = out.clone();
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(jobs) = args.jobs {
        config.jobs = jobs;
    }
    if let Some(list) = &args.delta {
        config.deltas = parse_deltas(list)?;
    }
    Ok(config)
}

/// Parses flags, runs the subcommand and returns its exit status.
pub fn run(cli: Cli) -> i32 {
    let (command, args) = match &cli.command {
        Sub::Evolve(a) => (Command::Evolve, a),
        Sub::Sweep(a) => (Command::Sweep, a),
        Sub::Action(a) => (Command::Action, a),
        Sub::Verify(a) => (Command::Verify, a),
        Sub::Rod(a) => (Command::Rod, a),
    };
    let result = prepare(command, args).and_then(|mut config| {
        let model = config.normalize()?;
        export::write_text(&config.output.join("effective_config.json"), &(config.to_json() + "\n"))?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.jobs)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        pool.install(|| commands::run(command, &config, &model))
    });
    match &result {
        Err(e) => error!("{e}"),
        Ok(o) if !o.passed => error!("verification failed"),
        Ok(_) => {}
    }
    exit_code(&result)
}
