use std::path::PathBuf;
use std::process::ExitCode;

use bds_core::experiment::{run, RunOptions};
use clap::Parser;

/// Run one simulation experiment described by a JSON config.
#[derive(Debug, Parser)]
#[command(name = "bds-sim", version)]
struct Args {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, env = "BDS_SIM_THREADS")]
    threads: Option<usize>,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Check intensities against their dominators and sample strong orders.
    #[arg(long)]
    verify: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let opts = RunOptions { out: args.out, threads: args.threads, seed: args.seed, verify: args.verify };
    ExitCode::from(run(&args.config, &opts) as u8)
}
