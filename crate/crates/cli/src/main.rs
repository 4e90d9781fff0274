mod commands;
mod config;
mod predictions;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::{eval, infer, plot, synth, train};

#[derive(Parser, Debug)]
#[command(name = "strokepose", version, about = "Activity-conditioned pose estimation for cyclic-motion videos")]
struct Cli {
    /// Default root for command outputs.
    #[arg(long, global = true, env = "STROKEPOSE_OUT", default_value = "runs")]
    out_root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic dataset.
    Synth(synth::Args),
    /// Train an estimator or one phase of the temporal refiner.
    Train(train::Args),
    /// Score checkpoints or stored predictions on a dataset split.
    Eval(eval::Args),
    /// Write per-frame predictions and optional skeleton overlays.
    Infer(infer::Args),
    /// Draw charts from stored evaluation reports.
    Plot(plot::Args),
}

/// Bad input rather than a runtime failure; exits with status 1.
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

#[macro_export]
macro_rules! invalid {
    ($($arg:tt)*) => {
        anyhow::Error::new($crate::Invalid(format!($($arg)*)))
    };
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let validation = err.chain().any(|e| {
        e.is::<Invalid>() || e.downcast_ref::<strokepose::Error>().is_some_and(strokepose::Error::is_validation)
    });
    if validation {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let root = cli.out_root;
    let result = match cli.command {
        Command::Synth(a) => synth::run(a, &root),
        Command::Train(a) => train::run(a, &root),
        Command::Eval(a) => eval::run(a, &root),
        Command::Infer(a) => infer::run(a, &root),
        Command::Plot(a) => plot::run(a, &root),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
