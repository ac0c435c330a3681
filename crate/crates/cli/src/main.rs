mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use serde_json::json;

use config::{load_config, Command, Options, RunConfig};
use run::{execute, Outputs, VerifyFailed};

/// Rough differential equations, their flows and their sensitivities.
#[derive(Debug, Parser)]
#[command(name = "roughsens", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    options: Options,
    /// JSON config or run manifest; its entries override the flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

const EXIT_DIVERGENCE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_VERIFY: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<VerifyFailed>().is_some() {
        return EXIT_VERIFY;
    }
    match err.chain().find_map(|e| e.downcast_ref::<roughsens::Error>()) {
        Some(roughsens::Error::Divergence { .. }) => EXIT_DIVERGENCE,
        _ => EXIT_CONFIG,
    }
}

fn resolve(cli: Cli) -> anyhow::Result<RunConfig> {
    let (command, options) = match &cli.config {
        Some(path) => {
            let (cmd, file) = load_config(path)?;
            (cmd.unwrap_or(cli.command), cli.options.overridden_by(file))
        }
        None => (cli.command, cli.options),
    };
    if options.jobs == Some(0) {
        anyhow::bail!(roughsens::Error::InvalidParameter("--jobs must be positive".into()));
    }
    run::resolve(command, options)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let started = Instant::now();
    let cfg = match resolve(cli) {
        Ok(cfg) => cfg,
        Err(err) => {
            eprintln!("error: {err:#}");
            // no usable config, so no manifest either
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Some(jobs) = cfg.options.jobs {
        if let Err(err) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: cannot start {jobs} worker threads: {err}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }

    let mut outputs: Option<Outputs> = None;
    let result = execute(&cfg, &mut outputs);
    let (status, code) = match &result {
        Ok(()) => ("ok", 0),
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = exit_code(err);
            let status = match code {
                EXIT_DIVERGENCE => "divergence",
                EXIT_VERIFY => "verify-failed",
                _ => "error",
            };
            (status, code)
        }
    };

    let Some(outputs) = outputs else {
        return ExitCode::from(code);
    };
    let manifest = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "status": status,
        "exit_code": code,
        "error": result.as_ref().err().map(|e| format!("{e:#}")),
        "outputs": outputs.files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "wall_time": started.elapsed().as_secs_f64(),
    });
    let path = outputs.path(".manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    if let Err(err) = roughsens::io::write_atomic(&path, text.as_bytes()) {
        eprintln!("error: cannot write manifest {}: {err}", path.display());
        return ExitCode::from(EXIT_CONFIG);
    }
    ExitCode::from(code)
}
