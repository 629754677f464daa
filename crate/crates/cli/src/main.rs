use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

mod commands;
mod plot;

/// Environment variable capping the worker pool.
const THREADS_ENV: &str = "IRGNM_IV_THREADS";

#[derive(Parser)]
#[command(name = "irgnm-iv", version, about = "Gauss-Newton estimation of instrumental regression with a binary instrument")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a sample from the simulation design
    Simulate(Common),
    /// Kernel density estimate of a sample, written as a density bundle
    Kde(Common),
    /// Solve the operator equation for the exact density or a sample
    Estimate(Common),
    /// Repeat sample, estimate, error over seeded replications
    Montecarlo(Common),
    /// Singular values of the linearized operator at the true solution
    Svd(Common),
    /// Convergence rates on a synthetic diagonal model
    Rates(Common),
}

#[derive(Args, Debug, Default)]
struct Common {
    /// JSON run configuration
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file (simulate) or directory (other commands)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sample CSV with columns y,z,w, or `exact`
    #[arg(long)]
    sample: Option<String>,
    /// Configuration overrides `--section.field value`; `--n` and `--seed`
    /// address `simulate.n` and `simulate.seed`
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
    overrides: Vec<String>,
}

/// Machine-readable failure, printed as JSON on stderr.
#[derive(Debug)]
pub struct CliError {
    kind: &'static str,
    message: String,
    code: u8,
}

impl CliError {
    pub fn input(kind: &'static str, message: impl Into<String>) -> Self {
        Self { kind, message: message.into(), code: 2 }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self { kind: "numerical", message: message.into(), code: 1 }
    }
}

impl From<irgnm_iv::Error> for CliError {
    fn from(e: irgnm_iv::Error) -> Self {
        let code = if e.is_input_error() { 2 } else { 1 };
        Self { kind: e.kind(), message: e.to_string(), code }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        irgnm_iv::Error::from(e).into()
    }
}

/// Resolved command-line options.
#[derive(Debug, Default)]
pub struct Invocation {
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub sample: Option<String>,
    pub overrides: Vec<(String, String)>,
}

fn resolve(common: Common) -> Result<Invocation, CliError> {
    let mut inv = Invocation { config: common.config, out: common.out, sample: common.sample, overrides: Vec::new() };
    let mut tokens = common.overrides.into_iter();
    while let Some(tok) = tokens.next() {
        let flag = tok
            .strip_prefix("--")
            .ok_or_else(|| CliError::input("usage", format!("expected --key value, found {tok:?}")))?;
        let (key, value) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = tokens
                    .next()
                    .ok_or_else(|| CliError::input("usage", format!("--{flag} needs a value")))?;
                (flag.to_string(), v)
            }
        };
        match key.as_str() {
            "config" => inv.config = Some(value.into()),
            "out" => inv.out = Some(value.into()),
            "sample" => inv.sample = Some(value),
            "n" => inv.overrides.push(("simulate.n".into(), value)),
            "seed" => inv.overrides.push(("simulate.seed".into(), value)),
            _ => inv.overrides.push((key, value)),
        }
    }
    Ok(inv)
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n >= 1)
        .ok_or_else(|| CliError::input("config", format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::input("config", format!("cannot size the thread pool: {e}")))
}

fn run(cli: Cli) -> Result<serde_json::Value, CliError> {
    configure_threads()?;
    match cli.command {
        Command::Simulate(c) => commands::simulate(resolve(c)?),
        Command::Kde(c) => commands::kde(resolve(c)?),
        Command::Estimate(c) => commands::estimate(resolve(c)?),
        Command::Montecarlo(c) => commands::montecarlo(resolve(c)?),
        Command::Svd(c) => commands::svd(resolve(c)?),
        Command::Rates(c) => commands::rates(resolve(c)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            eprintln!("{}", json!({ "kind": "usage", "message": msg.trim() }));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(summary) => {
            let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
            let _ = writeln!(std::io::stdout().lock(), "{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({ "kind": e.kind, "message": e.message, "exit_code": e.code }));
            ExitCode::from(e.code)
        }
    }
}
