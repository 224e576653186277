use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

use config::{extract_overrides, resolve, ConfigError};

/// Time-aware diffusion recommender: prepare data, train, evaluate, sweep.
///
/// Any configuration key can be overridden with `--section.key value`
/// (model keys may drop the `model.` prefix, e.g. `--loss.eta 1.0`) or with
/// `TOIREC_SECTION__KEY=value` in the environment. Flags win over the
/// environment, which wins over the config file.
#[derive(Debug, Parser)]
#[command(name = "toirec", version)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for every output of this run.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    /// Worker threads for evaluation and sweep runs.
    #[arg(long, global = true)]
    parallel: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Filter, index, normalize and split an interaction log into a snapshot.
    Prepare {
        #[arg(long)]
        input: Option<PathBuf>,
        /// Snapshot path (default: <run_dir>/snapshot.json).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write a synthetic interaction log with a known generating law.
    Synth {
        /// CSV path (default: <run_dir>/synth.csv); the spec is written next to it.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train with early stopping and save the best checkpoint.
    Train {
        #[arg(long)]
        snapshot: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test (or validation) split.
    Evaluate {
        #[arg(long)]
        snapshot: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: commands::EvalSplit,
    },
    /// Base / Base+TE / Base+TE+TP over several seeds.
    Ablate {
        /// Snapshot to use; a synthetic dataset is generated when omitted.
        #[arg(long)]
        snapshot: Option<PathBuf>,
    },
    /// Train and evaluate over the gamma x eta grid.
    Sweep {
        #[arg(long)]
        snapshot: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients on a tiny model.
    Gradcheck {
        /// Fail when any tensor exceeds this relative error.
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<toirec_core::Error>() {
            use toirec_core::Error as E;
            return match e {
                E::Config(_) => 2,
                E::NonFinite(_) => 4,
                E::Io { .. }
                | E::MalformedRow { .. }
                | E::DegenerateDataset(_)
                | E::Checkpoint(_)
                | E::Json(_)
                | E::IndexOutOfRange { .. }
                | E::EmptySequence
                | E::Dimension(_) => 3,
            };
        }
        if cause.downcast_ref::<commands::NumericFailure>().is_some() {
            return 4;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
    }
    1
}

fn run() -> anyhow::Result<()> {
    let (args, overrides) = extract_overrides(std::env::args().collect())?;
    let cli = Cli::parse_from(args);
    let mut cfg = resolve(cli.config.as_deref(), std::env::vars(), &overrides)?;
    if let Some(dir) = cli.run_dir {
        cfg.run_dir = Some(dir);
    }
    if let Some(p) = cli.parallel {
        if p == 0 {
            return Err(ConfigError("--parallel must be at least 1".into()).into());
        }
        cfg.eval.parallel = p;
    }
    match cli.command {
        Command::Prepare { input, output } => commands::prepare(&mut cfg, input, output),
        Command::Synth { output } => commands::synth(&cfg, output),
        Command::Train { snapshot } => commands::train(&mut cfg, snapshot),
        Command::Evaluate {
            snapshot,
            checkpoint,
            split,
        } => commands::evaluate(&mut cfg, snapshot, &checkpoint, split),
        Command::Ablate { snapshot } => commands::ablate(&mut cfg, snapshot),
        Command::Sweep { snapshot } => commands::sweep(&mut cfg, snapshot),
        Command::Gradcheck { tolerance } => commands::gradcheck(&cfg, tolerance),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
