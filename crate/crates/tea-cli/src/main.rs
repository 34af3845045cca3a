//! `tea`: batch command-line interface for tensor decomposition and the
//! tensor-augmented attention forecaster.
//!
//! Exit codes: 0 success; 1 internal/numerical; 2 invalid rank/argument;
//! 3 parse; 4 data; 5 I/O. Errors print to stderr as single-line
//! `error kind=<family> msg="…"` records.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tea_cli::commands::{
    bench_cmd, decompose, eval_cmd, gen_cmd, gradcheck_cmd, train_cmd, DecompKind,
};

#[derive(Parser)]
#[command(
    name = "tea",
    about = "Tensor decomposition and tensor-augmented attention forecasting",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a Tucker, CP, or TT factorization to a dense tensor container.
    Decompose {
        /// Dense tensor container file.
        #[arg(long)]
        input: PathBuf,
        /// Factorization structure: tucker, cp, or tt.
        #[arg(long)]
        kind: String,
        /// Comma-separated ranks (per mode for tucker, single value for cp,
        /// per internal bond for tt).
        #[arg(long)]
        ranks: Option<String>,
        /// Relative-error budget for tt (alternative to --ranks).
        #[arg(long)]
        eps: Option<f64>,
        /// Output container path (default: input path + kind suffix).
        #[arg(long)]
        output: Option<PathBuf>,
        /// Seed for randomized initialization (cp).
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model from a run-config file; writes checkpoint + report CSV.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint; prints `dataset,seq_len,pred_len,model,mse,mae` rows.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Which split to evaluate: train, val, or test.
        #[arg(long, default_value = "test")]
        split: String,
        /// Also evaluate a control checkpoint on the same split.
        #[arg(long)]
        with_control: Option<PathBuf>,
    },
    /// Finite-difference check of every trainable parameter gradient.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
    },
    /// Wall time and counted attention FLOPs, core vs. full attention.
    Bench {
        #[arg(long)]
        config: PathBuf,
    },
    /// Generate the bundled synthetic ETT-schema dataset.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        rows: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> tea_cli::error::Result<String> {
    match cli.command {
        Command::Decompose {
            input,
            kind,
            ranks,
            eps,
            output,
            seed,
        } => decompose(
            &input,
            kind.parse::<DecompKind>()?,
            ranks.as_deref(),
            eps,
            output.as_deref(),
            seed,
        ),
        Command::Train { config } => train_cmd(&config),
        Command::Eval {
            checkpoint,
            split,
            with_control,
        } => eval_cmd(&checkpoint, &split, with_control.as_deref()),
        Command::Gradcheck { config } => gradcheck_cmd(&config),
        Command::Bench { config } => bench_cmd(&config),
        Command::Gen { out, rows, seed } => gen_cmd(&out, rows, seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(output) => {
            print!("{output}");
            if !output.ends_with('\n') {
                println!();
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error kind={} msg=\"{e}\"", e.family());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
