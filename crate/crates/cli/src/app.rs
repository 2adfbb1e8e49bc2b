//! Argument parsing and process-level behavior of the `tricl-lab` binary.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::{run, Command, CONFIG_SCHEMA};

#[derive(Parser)]
#[command(
    name = "tricl-lab",
    version,
    about = "Tri-factor contrastive learning experiments on synthetic graphs"
)]
#[command(after_help = CONFIG_SCHEMA)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Pairwise distances between optimal two- and three-factor solutions
    Identifiability(RunArgs),
    /// Train on a graph, fix signs, sort by importance and evaluate
    TrainEval(RunArgs),
    /// Downstream error bounds for every top-m selection
    BoundsSweep(RunArgs),
    /// Finite-difference check of every objective's gradient
    GradientAudit(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides output_dir)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides seed)
    #[arg(long)]
    seed: Option<u64>,
}

/// Runs the command line `args` (program name first) and returns the exit code.
///
/// Errors are reported on `stderr` as a single `error[<tag>]: <message>` line.
pub fn execute<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = write!(stdout, "{}", e.render());
            return 0;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            let _ = writeln!(stderr, "error[usage]: {first}");
            return 2;
        }
    };
    let (command, args) = match cli.command {
        Cmd::Identifiability(a) => (Command::Identifiability, a),
        Cmd::TrainEval(a) => (Command::TrainEval, a),
        Cmd::BoundsSweep(a) => (Command::BoundsSweep, a),
        Cmd::GradientAudit(a) => (Command::GradientAudit, a),
    };
    match run(command, &args.config, args.out, args.seed) {
        Ok((manifest, summary)) => {
            let _ = write!(stdout, "{summary}");
            let _ = writeln!(
                stdout,
                "wrote {} files in {:.2}s",
                manifest.files.len() + 1,
                manifest.duration_seconds
            );
            0
        }
        Err(e) => {
            let _ = writeln!(stderr, "error[{}]: {}", e.tag(), e.one_line());
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests;
