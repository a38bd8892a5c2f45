use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pmmh::cli::{dispatch, replay, CliError, Command, DispatchOptions};
use pmmh::config::parse_config;

#[derive(Parser)]
#[command(version, about = "Particle marginal Metropolis-Hastings for state-space models")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate states and observations (states.csv, obs.csv).
    Simulate(RunArgs),
    /// Run one bootstrap filter (filter.json).
    Filter(RunArgs),
    /// Run a PMMH chain (trace.csv, trajectories.csv, summary.json, acf.csv, hist.csv).
    Pmmh(RunArgs),
    /// Estimate the marginal likelihood (evidence.json).
    Evidence(RunArgs),
    /// Recompute diagnostics from an existing trace.csv.
    Diag {
        #[command(flatten)]
        run: RunArgs,
        /// Trace file; defaults to <out_dir>/trace.csv.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Re-run the command recorded in a run_meta.json.
    Replay {
        meta: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Config file in `key = value` format.
    #[arg(short, long)]
    config: PathBuf,
    /// Overrides `out_dir`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `threads` (PMMH_THREADS still wins).
    #[arg(long)]
    threads: Option<usize>,
}

fn run(cmd: Command, args: RunArgs, options: DispatchOptions) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", args.config.display())))?;
    let mut config = parse_config(&text)?;
    if let Some(dir) = args.out_dir {
        config.out_dir = dir;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(threads) = args.threads {
        if threads == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        config.threads = threads;
    }
    dispatch(cmd, &config, &options).map(|_| ())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Simulate(a) => run(Command::Simulate, a, DispatchOptions::default()),
        Cmd::Filter(a) => run(Command::Filter, a, DispatchOptions::default()),
        Cmd::Pmmh(a) => run(Command::Pmmh, a, DispatchOptions::default()),
        Cmd::Evidence(a) => run(Command::Evidence, a, DispatchOptions::default()),
        Cmd::Diag { run: a, trace } => run(Command::Diag, a, DispatchOptions { trace_path: trace }),
        Cmd::Replay { meta, out_dir } => replay(&meta, out_dir.as_deref()).map(|_| ()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
