//! `ddsl`: synthesise data, train, evaluate, predict and check gradients.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numerical
//! failure (non-finite values or a failed gradient check).

mod config;
mod eval;
mod predict;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use ddsl::data::{io::write_dataset, synth_dataset};
use ddsl::engine::gradcheck::{gradcheck_config, model_gradcheck};

use eval::{EvalArgs, SplitArg};
use predict::PredictArgs;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "ddsl", version, about = "Dual-decoder lesion segmentation")]
struct Cli {
    /// Worker threads for evaluation; 1 gives bit-exact reproducibility.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset directory.
    Synth {
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        side: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the models named in a run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from a checkpoint of one of the configured models.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Stratified metrics of one or more checkpoints.
    Eval {
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        /// Dataset directory; defaults to the one in the checkpoint's run config.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Report order, e.g. `ddsl,baseline`.
        #[arg(long, value_delimiter = ',')]
        models: Option<Vec<String>>,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Directory for strata.csv and strata.txt.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Segment one image.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Binary {0,255} mask PNG.
        #[arg(long)]
        out: PathBuf,
        /// 16-bit probability PNG of the main map.
        #[arg(long)]
        prob: Option<PathBuf>,
        /// 16-bit probability PNG of the auxiliary map.
        #[arg(long)]
        aux: Option<PathBuf>,
    },
    /// Finite-difference gradient check in 64-bit.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "ddsl")]
        model: String,
        /// Probe at most this many entries per parameter tensor.
        #[arg(long)]
        limit: Option<usize>,
    },
}

/// Outcome that is not an error but still sets a non-zero exit code.
enum Status {
    Ok,
    Failed(u8),
}

fn dispatch(command: Command) -> Result<Status> {
    match command {
        Command::Synth { n, side, seed, out } => {
            let samples = synth_dataset(n, side, seed)?;
            write_dataset(&out, &samples).with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {n} samples of {side}x{side} to {}", out.display());
        }
        Command::Train { config, resume } => train::run(&config, resume.as_deref())?,
        Command::Eval {
            checkpoints,
            data,
            models,
            split,
            out,
        } => eval::run(&EvalArgs {
            checkpoints,
            data,
            models,
            split,
            out,
        })?,
        Command::Predict {
            checkpoint,
            image,
            out,
            prob,
            aux,
        } => predict::run(&PredictArgs {
            checkpoint,
            image,
            out,
            prob,
            aux,
        })?,
        Command::Gradcheck { seed, model, limit } => {
            let outcome = model_gradcheck(&model, &gradcheck_config(), seed, limit)?;
            print!("{outcome}");
            if !outcome.passes() {
                return Ok(Status::Failed(EXIT_NUMERIC));
            }
        }
    }
    Ok(Status::Ok)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numeric = err
        .chain()
        .any(|e| matches!(e.downcast_ref::<ddsl::Error>(), Some(ddsl::Error::NonFinite(_))));
    if numeric {
        EXIT_NUMERIC
    } else {
        EXIT_CONFIG
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    match dispatch(cli.command) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Failed(code)) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
