mod config;
mod demo;
mod run;
mod tables;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{FileConfig, UsageError};

#[derive(Debug, Parser)]
#[command(
    name = "iclprobe",
    version,
    about = "In-context learning probes: generate, evaluate, sweep, analyze"
)]
pub struct Cli {
    /// Root seed for every random stream [default: 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for sweep cells and SUDA checkpoints [default: physical cores]
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory [default: out]
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// JSON config file; flags override its values
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Generate task suites as JSONL
    Gen(run::GenArgs),
    /// Score suites against one backend
    Eval(run::EvalArgs),
    /// Evaluate every (suite, checkpoint) cell of a manifest, resuming completed cells
    Sweep(run::SweepArgs),
    /// Correlations, gaps, Johansen and scaling CSVs from a result store
    Stats(tables::StatsArgs),
    /// Singular unembedding direction analysis over tensor archives
    Suda(tables::SudaArgs),
    /// Plot-ready CSVs joining the store with SUDA outputs
    Report(tables::ReportArgs),
    /// Write a self-contained demo vocabulary, probe checkpoints and manifest
    Demo(demo::DemoArgs),
}

/// Settings shared by every subcommand after merging flags, config and defaults.
#[derive(Debug, Clone, serde::Serialize)]
pub struct Globals {
    pub seed: u64,
    pub jobs: usize,
    pub out: PathBuf,
    #[serde(skip)]
    pub file: FileConfig,
}

fn globals(cli: &Cli) -> anyhow::Result<Globals> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let jobs = cli.jobs.or(file.jobs).unwrap_or_else(num_cpus::get_physical);
    if jobs == 0 {
        return Err(UsageError::new("--jobs must be >= 1").into());
    }
    Ok(Globals {
        seed: cli.seed.or(file.seed).unwrap_or(0),
        jobs,
        out: cli
            .out
            .clone()
            .or_else(|| file.out.clone())
            .unwrap_or_else(|| "out".into()),
        file,
    })
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let g = globals(&cli)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(g.jobs)
        .build_global()
        .map_err(|e| anyhow::anyhow!("thread pool: {e}"))?;
    match cli.command {
        Command::Gen(a) => run::gen(&g, a),
        Command::Eval(a) => run::eval(&g, a),
        Command::Sweep(a) => run::sweep(&g, a),
        Command::Stats(a) => tables::stats(&g, a),
        Command::Suda(a) => tables::suda(&g, a),
        Command::Report(a) => tables::report(&g, a),
        Command::Demo(a) => demo::demo(&g, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let usage = e.downcast_ref::<UsageError>().is_some();
            eprintln!("error: {e:#}");
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
