//! Experiment runner: trains models, samples level sets, scans test sets,
//! compares classifiers and computes saliency maps from JSON run specs.

pub mod compare;
pub mod error;
pub mod output;
pub mod parallel;
pub mod saliency;
pub mod sample;
pub mod scan;
pub mod spec;
pub mod train;

use std::path::Path;

pub use error::{CliError, CliResult};
pub use output::OutputSet;
pub use spec::{LoadedSpec, RunSpec};

/// Runs that finished but did not meet the sampling success criterion.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Outcome {
    pub failures: Vec<String>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            3
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Train,
    Sample,
    Scan,
    Compare,
    Saliency,
}

/// Computes a command's outputs without touching the filesystem.
pub fn plan(
    command: Command,
    spec: &LoadedSpec,
    seed: Option<u64>,
) -> CliResult<(OutputSet, Outcome)> {
    match command {
        Command::Train => train::cmd_train(spec, seed),
        Command::Sample => sample::cmd_sample(spec, seed),
        Command::Scan => scan::cmd_scan(spec),
        Command::Compare => compare::cmd_compare(spec, seed),
        Command::Saliency => saliency::cmd_saliency(spec, seed),
    }
}

/// Loads the spec, runs the command and writes its outputs under `out`.
pub fn run(
    command: Command,
    spec_path: &Path,
    out: &Path,
    seed: Option<u64>,
) -> CliResult<Outcome> {
    let spec = LoadedSpec::from_file(spec_path)?;
    let (files, outcome) = plan(command, &spec, seed)?;
    files.commit(out)?;
    Ok(outcome)
}
