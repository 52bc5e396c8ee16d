mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use inorm_core::error::Error;
use inorm_core::exec::ExecMode;

use commands::CHECKPOINT_FILE;
use config::ExperimentConfig;

const EXIT_USAGE: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(
    name = "inorm",
    about = "Train, fault-sweep, and uncertainty-evaluate dense networks with inverted normalization and affine dropout",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for Monte Carlo runs (falls back to INORM_THREADS,
    /// then to one thread per core).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint + history.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Run the configured fault sweeps against a checkpoint.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate (default: <out>/checkpoint.json).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Additional checkpoint evaluated on the same sweeps, written as
        /// paired `*_baseline.csv` curves.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Evaluate uncertainty and OOD detection under input shifts.
    Ood {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Also write per-sample NLL dumps.
        #[arg(long)]
        dump_nll: bool,
    },
    /// Finite-difference check of every layer kind's gradients.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Train { common }
            | Command::Sweep { common, .. }
            | Command::Ood { common, .. }
            | Command::Gradcheck { common } => common,
        }
    }
}

fn init_threads(requested: Option<usize>) -> ExecMode {
    let threads = requested.or_else(|| {
        std::env::var("INORM_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(k) = threads {
        let k = k.max(1);
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            log::warn!("thread pool already initialized: {e}");
        }
    }
    ExecMode::default()
}

fn exit_code_for(err: &Error) -> u8 {
    if err.is_usage() {
        EXIT_USAGE
    } else {
        EXIT_NUMERIC
    }
}

fn run(cli: Cli) -> Result<u8, Error> {
    let common = cli.command.common();
    let exec = init_threads(common.threads);
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    let out_dir = cfg.out_dir.clone();

    match &cli.command {
        Command::Train { .. } => {
            commands::cmd_train(&cfg, &out_dir)?;
            Ok(0)
        }
        Command::Sweep {
            checkpoint,
            baseline,
            ..
        } => {
            let ckpt = checkpoint
                .clone()
                .unwrap_or_else(|| out_dir.join(CHECKPOINT_FILE));
            commands::cmd_sweep(&cfg, &out_dir, &ckpt, baseline.as_ref(), exec)?;
            Ok(0)
        }
        Command::Ood {
            checkpoint,
            dump_nll,
            ..
        } => {
            let ckpt = checkpoint
                .clone()
                .unwrap_or_else(|| out_dir.join(CHECKPOINT_FILE));
            commands::cmd_ood(&cfg, &out_dir, &ckpt, *dump_nll, exec)?;
            Ok(0)
        }
        Command::Gradcheck { .. } => {
            let passed = commands::cmd_gradcheck(cfg.seed)?;
            Ok(if passed { 0 } else { EXIT_NUMERIC })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
