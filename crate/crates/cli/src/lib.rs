//! Experiment runner for tri-factor contrastive learning on synthetic graphs.
//!
//! Every command reads one JSON config, writes CSV/JSON artifacts into an
//! output directory and finishes with a `manifest.json` listing each file with
//! its SHA-256 digest.

pub mod app;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

pub use config::{Command, ExperimentConfig, CONFIG_SCHEMA};
pub use error::{CliError, Result};
pub use manifest::{read_manifest, Outputs, RunManifest};

/// Loads, overrides and validates the config, then runs `command`.
///
/// The manifest is written even when a check inside the command fails, so
/// the failing artifacts can be inspected; the error is returned afterwards.
pub fn run(
    command: Command,
    config_path: &Path,
    out: Option<PathBuf>,
    seed: Option<u64>,
) -> Result<(RunManifest, String)> {
    let mut config = ExperimentConfig::load(config_path)?;
    config.apply_overrides(out, seed);
    run_config(command, config)
}

pub fn run_config(command: Command, config: ExperimentConfig) -> Result<(RunManifest, String)> {
    config.validate(command)?;
    let mut outputs = Outputs::create(config.output_dir()?)?;
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let clock = Instant::now();
    let outcome = match command {
        Command::Identifiability => commands::identifiability(&config, &mut outputs),
        Command::TrainEval => commands::train_eval(&config, &mut outputs),
        Command::BoundsSweep => commands::bounds_sweep(&config, &mut outputs),
        Command::GradientAudit => commands::gradient_audit(&config, &mut outputs),
    };
    let (summary, failure) = match outcome {
        Ok(summary) => (summary, None),
        Err(CliError::Check(msg)) => (String::new(), Some(CliError::Check(msg))),
        Err(e) => return Err(e),
    };
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.name().to_string(),
        config,
        started_unix_seconds: started,
        duration_seconds: clock.elapsed().as_secs_f64(),
        files: outputs.files().to_vec(),
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    outputs.write_bytes("manifest.json", text.as_bytes())?;
    match failure {
        Some(e) => Err(e),
        None => Ok((manifest, summary)),
    }
}
