use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use regnn_cli::commands;
use regnn_cli::Result;

#[derive(Parser)]
#[command(name = "regnn", version, about = "Reversible edge graph networks for facial reaction generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    Synth {
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Train on a corpus, writing a checkpoint and a loss log.
    Train {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from this checkpoint up to the configured epoch count.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Generate reactions for every behaviour of a corpus.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        samples: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Generate reactions to one speaker clip.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        speaker: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        samples: Option<usize>,
        /// Also write the predicted distribution as JSON.
        #[arg(long)]
        distribution: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Score predictions against a corpus.
    Eval {
        /// Prediction manifest written by `predict`.
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Report path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run the invariant suite; exits 3 on any failure.
    Check {
        /// Model to check; a fresh one when absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

fn run(cli: Cli) -> Result<String> {
    let load = |c: &Common| commands::load_config(c.config.as_deref(), c.seed);
    match cli.command {
        Command::Synth { out, common } => commands::synth(&load(&common)?, out),
        Command::Train {
            corpus,
            out,
            resume,
            common,
        } => commands::train(&load(&common)?, corpus, out, resume.as_deref()),
        Command::Predict {
            checkpoint,
            corpus,
            out,
            samples,
            common,
        } => commands::predict(&load(&common)?, &checkpoint, corpus, out, samples),
        Command::Sample {
            checkpoint,
            speaker,
            out,
            samples,
            distribution,
            common,
        } => commands::sample(&load(&common)?, &checkpoint, &speaker, &out, samples, distribution.as_deref()),
        Command::Eval {
            predictions,
            corpus,
            out,
            common,
        } => commands::eval(&load(&common)?, &predictions, corpus, out.as_deref()),
        Command::Check {
            checkpoint,
            corpus,
            common,
        } => commands::check(&load(&common)?, checkpoint.as_deref(), corpus),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
