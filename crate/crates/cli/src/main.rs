use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

mod commands;
mod config;

/// Exit-code classes of a failed command.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0} verification check(s) failed")]
    VerifyFailed(usize),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::VerifyFailed(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<gatemod::Error> for CliError {
    fn from(e: gatemod::Error) -> Self {
        use gatemod::Error as E;
        match e {
            E::Numerical { .. } | E::NonConvergence { .. } | E::Domain(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(format!("io error: {e}"))
    }
}

#[derive(Parser)]
#[command(name = "gatemod", version, about = "Gated mixtures of primitives: solver, flows, circuits and experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the seed in the config file.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one instance for its equilibrium weights.
    Solve(RunArgs),
    /// Integrate the gating flow.
    Flow(RunArgs),
    /// Simulate the multi-timescale circuit.
    Net(RunArgs),
    /// Run a boids experiment.
    Boids(RunArgs),
    /// Synthesize or ingest bandit data and fit the models.
    Bandit(RunArgs),
    /// Run the verification suite.
    Verify {
        #[arg(long, default_value = "all")]
        scope: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    config_digest: String,
    seed: u64,
    tool_version: &'a str,
    timestamp: String,
}

/// Writes `resolved_config.json` and a manifest holding its SHA-256.
pub fn write_manifest<T: Serialize>(out: &Path, command: &str, seed: u64, resolved: &T) -> Result<(), CliError> {
    use sha2::{Digest, Sha256};
    let mut text = serde_json::to_string_pretty(resolved).map_err(|e| CliError::Config(e.to_string()))?;
    text.push('\n');
    std::fs::write(out.join("resolved_config.json"), &text)?;
    let manifest = RunManifest {
        command,
        config_digest: hex::encode(Sha256::digest(text.as_bytes())),
        seed,
        tool_version: env!("CARGO_PKG_VERSION"),
        timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
    };
    let mut m = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Config(e.to_string()))?;
    m.push('\n');
    std::fs::write(out.join("manifest.json"), m)?;
    Ok(())
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("GATEMOD_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("GATEMOD_THREADS must be a nonnegative integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Solve(a) => commands::solve(&a.config, &a.out, a.seed),
        Command::Flow(a) => commands::flow(&a.config, &a.out, a.seed),
        Command::Net(a) => commands::net(&a.config, &a.out, a.seed),
        Command::Boids(a) => commands::boids(&a.config, &a.out, a.seed),
        Command::Bandit(a) => commands::bandit(&a.config, &a.out, a.seed),
        Command::Verify { scope, out, seed } => commands::verify(&scope, &out, seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
