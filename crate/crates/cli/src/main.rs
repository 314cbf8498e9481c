use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rl_cli::{cmd_analyze, cmd_benchmark, cmd_run, cmd_selftest, RunOpts};
use rl_core::specfile::DistributedMode;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    None,
    Hogwild,
    ServerWorker,
}

impl From<ModeArg> for DistributedMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::None => DistributedMode::None,
            ModeArg::Hogwild => DistributedMode::Hogwild,
            ModeArg::ServerWorker => DistributedMode::ServerWorker,
        }
    }
}

#[derive(Parser)]
#[command(name = "rl", about = "Spec-driven reinforcement learning experiments", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone)]
struct CommonOpts {
    /// Dotted key=value overrides applied before validation (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory for run artifacts.
    #[arg(long = "out", value_name = "DIR")]
    out: Option<PathBuf>,
    /// Override meta.distributed.
    #[arg(long = "mode", value_enum)]
    mode: Option<ModeArg>,
    /// Override meta.num_sessions (one worker per session).
    #[arg(long = "workers", value_name = "N")]
    workers: Option<usize>,
}

impl From<&CommonOpts> for RunOpts {
    fn from(c: &CommonOpts) -> Self {
        RunOpts {
            overrides: c.set.clone(),
            out_dir: c.out.clone(),
            mode: c.mode.map(Into::into),
            workers: c.workers,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one Trial from a spec file.
    Run {
        #[arg(long = "spec", value_name = "PATH")]
        spec: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Expand the spec's search space and run an Experiment.
    Search {
        #[arg(long = "spec", value_name = "PATH")]
        spec: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Recompute aggregates and plots from a run directory.
    Analyze {
        #[arg(long = "dir", value_name = "RUN_DIR")]
        dir: PathBuf,
    },
    /// Run the shipped benchmark matrix and emit the results table.
    Benchmark {
        /// Directory of benchmark spec files.
        #[arg(long = "spec-dir", value_name = "DIR", default_value = "specs/benchmark")]
        spec_dir: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Run the fast oracle suites (gradient checks, return oracles,
    /// replay statistics, Gumbel marginals, sum-tree audit).
    Selftest,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match &cli.command {
        Command::Run { spec, common } => cmd_run(spec, &common.into(), false),
        Command::Search { spec, common } => cmd_run(spec, &common.into(), true),
        Command::Analyze { dir } => cmd_analyze(dir),
        Command::Benchmark { spec_dir, common } => cmd_benchmark(spec_dir, &common.into()),
        Command::Selftest => cmd_selftest(),
    };
    ExitCode::from(code as u8)
}
