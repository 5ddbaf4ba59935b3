#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod jobs;
mod presets;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use commands::{check, enhance, eval, mix, train};

/// Hybrid time-domain / time-frequency speech enhancement.
#[derive(Debug, Parser)]
#[command(name = "mdphd", version)]
struct Cli {
    /// Worker threads for file-parallel work in mix, enhance and eval.
    /// Results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize a corpus of noisy / clean / noise WAV trios and a manifest.
    Mix(mix::MixArgs),
    /// Train a hybrid model (or a single network) from a manifest.
    Train(train::TrainArgs),
    /// Enhance a WAV file or a directory of WAV files with a checkpoint.
    Enhance(enhance::EnhanceArgs),
    /// Score a checkpoint on a test manifest, or score existing WAV pairs.
    Eval(eval::EvalArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(check::GradcheckArgs),
    /// Print layer tables, receptive fields and parameter counts.
    Describe(check::DescribeArgs),
}

/// Settings every command shares.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Global {
    pub jobs: usize,
    pub deterministic: bool,
}

/// Failure of the gradient suite; reported with exit code 2.
#[derive(Debug)]
pub struct CheckFailed(pub String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

/// Prints the fully resolved configuration of a run.
pub fn print_config(command: &str, global: Global, config: &impl Serialize) {
    let v = serde_json::json!({ "command": command, "global": global, "config": config });
    println!(
        "{}",
        serde_json::to_string_pretty(&v).expect("config serializes")
    );
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numeric = err.chain().any(|e| {
        e.downcast_ref::<mdphd::Error>()
            .is_some_and(mdphd::Error::is_numeric)
            || e.is::<CheckFailed>()
    });
    if numeric {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let deterministic = std::env::var("MDPHD_DETERMINISTIC").is_ok_and(|v| v == "1");
    // Every computation is already a pure function of its inputs; deterministic
    // mode additionally pins the run to a single worker.
    let global = Global {
        jobs: if deterministic { 1 } else { cli.jobs.max(1) },
        deterministic,
    };
    let result = match cli.command {
        Command::Mix(a) => mix::run(a, global),
        Command::Train(a) => train::run(a, global),
        Command::Enhance(a) => enhance::run(a, global),
        Command::Eval(a) => eval::run(a, global),
        Command::Gradcheck(a) => check::gradcheck(a, global),
        Command::Describe(a) => check::describe(a, global),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
