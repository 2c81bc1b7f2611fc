mod config;
mod output;
mod run;
mod sweep;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde_json::Value;

use ospde_core::verify::CHECK_NAMES;
use ospde_core::Builtin;

use config::{ConfigError, RunConfig};

/// Penalization solver and property checks for obstacle problems of
/// quasilinear stochastic PDEs with Neumann boundary conditions.
#[derive(Debug, Parser)]
#[command(name = "ospde", version)]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run even if the contraction property is not verified.
    #[arg(long, global = true)]
    force: bool,
    /// Worker threads for the per-seed work.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print the available checks and exit.
    #[arg(long)]
    list_checks: bool,
    /// Print the built-in coefficient kinds and exit.
    #[arg(long)]
    list_coefficients: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve and check the configured problem (the default).
    Run,
    /// Rerun the configuration once per value of one parameter.
    Sweep {
        #[arg(long, value_enum)]
        parameter: sweep::Parameter,
        #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
        values: Vec<f64>,
    },
}

fn load(path: Option<&Path>) -> Result<Value> {
    let path = path.ok_or_else(|| ConfigError::new("document", "no --config given"))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::new("document", format!("cannot read {}: {e}", path.display())))?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| ConfigError::new("document", format!("invalid JSON: {e}")))?;
    Ok(doc)
}

fn out_dir(cli: &Cli, doc: &Value) -> Result<PathBuf> {
    if let Some(out) = &cli.out {
        return Ok(out.clone());
    }
    let config = RunConfig::from_value(doc)?;
    Ok(PathBuf::from(config.output.dir.unwrap_or_else(|| "ospde-out".into())))
}

fn list_coefficients() {
    let forms = [
        "0",
        "value",
        "offset + slope_y * y + slope_z . z",
        "offset + amplitude * sin(frequency * y)",
        "offset + clamp(slope * y, lower, upper)",
        "state-free spatial profile (constant, cosine, linear, bump)",
    ];
    for (name, form) in Builtin::NAMES.iter().zip(forms) {
        println!("{name:16} {form}");
    }
    println!("\nledger functions (checks.phi): square, smooth-abs, log-cosh");
}

fn execute(cli: &Cli) -> Result<usize> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let doc = load(cli.config.as_deref())?;
    let out = out_dir(cli, &doc)?;
    match &cli.command {
        None | Some(Command::Run) => {
            let report = run::run(&doc, &out, cli.force)?;
            for c in &report.summary.checks {
                println!("{:?} {} measured {} tolerance {} margin {}", c.verdict, c.check, c.measured, c.tolerance, c.margin);
            }
            println!("wrote {} files to {}", report.files.len() + 1, out.display());
            Ok(report.summary.failed_checks())
        }
        Some(Command::Sweep { parameter, values }) => {
            let report = sweep::sweep(&doc, *parameter, values, &out, cli.force)?;
            println!("wrote {}", out.join("sweep.csv").display());
            Ok(report.failed_checks)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.list_checks || cli.list_coefficients {
        if cli.list_checks {
            CHECK_NAMES.iter().for_each(|c| println!("{c}"));
        }
        if cli.list_coefficients {
            list_coefficients();
        }
        return ExitCode::SUCCESS;
    }
    match execute(&cli) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(failed) => {
            eprintln!("{failed} check(s) failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
