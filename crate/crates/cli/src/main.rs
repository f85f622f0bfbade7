//! `pvcrit` command-line front end.
//!
//! Exit codes: 0 success, 1 validation failure, 2 stage error, 3 I/O error.
//! Errors are printed to stderr as one JSON object per line.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pvcrit_core::ingest::load_dataset;
use pvcrit_core::model::validate_dataset;
use pvcrit_core::pipeline::{config_for_synth, run_with_threads, write_run_dir, PipelineConfig, PipelineError};
use pvcrit_core::synth::{generate, write_files, SynthError, SynthSpec};
use serde_json::json;

#[derive(Parser)]
#[command(name = "pvcrit", about = "Critical (voltage, time) cases for PV hosting-capacity studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline and write a run directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Generate a synthetic feeder plus a matching pipeline config.
    Synth {
        /// TOML spec; the default 49-node feeder when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a config and the dataset it names without running the pipeline.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the tool version.
    Version,
}

/// A failure with its exit code and JSON diagnostic.
struct Failure {
    code: u8,
    diagnostic: String,
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure { code: e.exit_code() as u8, diagnostic: e.to_json() }
    }
}

impl From<SynthError> for Failure {
    fn from(e: SynthError) -> Self {
        let code = e.exit_code();
        let diagnostic = json!({
            "status": "error",
            "stage": "synth",
            "exit_code": code,
            "message": e.to_string(),
        });
        Failure { code: code as u8, diagnostic: diagnostic.to_string() }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    PipelineError::Io { path: path.to_path_buf(), source: e }.into()
}

fn run(config: &Path, out: &Path, threads: Option<usize>) -> Result<serde_json::Value, Failure> {
    let config = PipelineConfig::load(config)?;
    let run = run_with_threads(&config, threads)?;
    write_run_dir(&run, out)?;
    Ok(json!({
        "status": "ok",
        "out": out,
        "groups": run.report.grouping.groups,
        "correlation_splits": run.report.grouping.correlation_splits,
        "removed_bad_data": run.report.bad_data.removed,
        "critical_cases": run.report.critical_cases.len(),
    }))
}

fn synth(spec: Option<&Path>, out: &Path) -> Result<serde_json::Value, Failure> {
    let spec = match spec {
        Some(path) => SynthSpec::from_toml_str(&fs::read_to_string(path).map_err(|e| io_failure(path, e))?)?,
        None => SynthSpec::default(),
    };
    let (dataset, truth) = generate(&spec)?;
    write_files(&dataset, &truth, out)?;
    let config_path = out.join("pipeline.toml");
    fs::write(&config_path, config_for_synth(&spec).to_toml_string()).map_err(|e| io_failure(&config_path, e))?;
    let spec_path = out.join("spec.toml");
    fs::write(&spec_path, spec.to_toml_string()).map_err(|e| io_failure(&spec_path, e))?;
    Ok(json!({
        "status": "ok",
        "out": out,
        "config": config_path,
        "nodes": dataset.n_nodes(),
        "timestamps": dataset.n_times(),
        "seed_used": truth.seed_used,
    }))
}

fn validate(config: &Path) -> Result<serde_json::Value, Failure> {
    let config = PipelineConfig::load(config)?;
    config.check()?;
    let dataset = load_dataset(&config.ingest).map_err(PipelineError::from)?;
    let violations: Vec<String> = validate_dataset(&dataset).iter().map(ToString::to_string).collect();
    if !violations.is_empty() {
        return Err(PipelineError::Validation(violations).into());
    }
    Ok(json!({
        "status": "ok",
        "nodes": dataset.n_nodes(),
        "timestamps": dataset.n_times(),
        "missing_voltage_cells": dataset.voltages.missing_count(),
    }))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .init();

    let result = match &cli.command {
        Command::Run { config, out, threads } => run(config, out, *threads),
        Command::Synth { spec, out } => synth(spec.as_deref(), out),
        Command::Validate { config } => validate(config),
        Command::Version => {
            println!("pvcrit {}", env!("CARGO_PKG_VERSION"));
            return ExitCode::SUCCESS;
        }
    };
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("{}", f.diagnostic);
            ExitCode::from(f.code)
        }
    }
}
