use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use trexd::Command;

#[derive(Parser)]
#[command(name = "trexd", version, about = "Level-set sampling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct Common {
    /// Run spec (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the spec.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train classifiers and VAEs on a dataset recipe.
    Train(Common),
    /// Sample inputs matching a target confidence.
    Sample(Common),
    /// Count ambiguous items and confident misclassifications in a test set.
    Scan(Common),
    /// Compare two classifiers' high-confidence samples.
    Compare(Common),
    /// SmoothGrad saliency and object-removal probe.
    Saliency(Common),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let (command, args) = match cli.command {
        Cmd::Train(a) => (Command::Train, a),
        Cmd::Sample(a) => (Command::Sample, a),
        Cmd::Scan(a) => (Command::Scan, a),
        Cmd::Compare(a) => (Command::Compare, a),
        Cmd::Saliency(a) => (Command::Saliency, a),
    };
    match trexd::run(command, &args.spec, &args.out, args.seed) {
        Ok(outcome) => {
            for f in &outcome.failures {
                eprintln!("sampling failure: {f}");
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
