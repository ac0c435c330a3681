use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Subcommand)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Lift the driver to a rough path and write it as JSON.
    Lift,
    /// Solve the equation driven by the driver.
    Solve,
    /// Jacobian of the flow in the initial point, with a difference check.
    Jacobian,
    /// Response of the solution to perturbations of a given kind.
    Scan,
    /// Run the invariant suite.
    Verify,
    /// Sample a fractional Brownian path.
    Fbm,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Lift => "lift",
            Command::Solve => "solve",
            Command::Jacobian => "jacobian",
            Command::Scan => "scan",
            Command::Verify => "verify",
            Command::Fbm => "fbm",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// Flags shared by every command; all optional so that a config file can fill them.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(default)]
pub struct Options {
    /// Driver spec, e.g. `fbm:H=0.4,d=2,N=4096,seed=7`.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub driver: Option<String>,
    /// Vector field spec, e.g. `linear:lambda=0.5`.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    /// Variation index; below 2 selects the Young solver.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// Number of grid steps, overriding the driver spec.
    #[arg(long = "N", global = true)]
    #[serde(rename = "N", skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Picard tolerance.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    /// Output path prefix.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    /// Worker threads.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    /// Perturbation sizes, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deltas: Option<Vec<f64>>,
    /// Perturbation kind: initial, field, dilation or translation.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    /// Initial point, comma separated.
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<f64>>,
    /// Direction field for `scan --kind field`.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub direction: Option<String>,
}

impl Options {
    /// Fields set in `other` replace those of `self`.
    pub fn overridden_by(self, other: Options) -> Options {
        Options {
            driver: other.driver.or(self.driver),
            field: other.field.or(self.field),
            p: other.p.or(self.p),
            n: other.n.or(self.n),
            seed: other.seed.or(self.seed),
            tol: other.tol.or(self.tol),
            out: other.out.or(self.out),
            format: other.format.or(self.format),
            jobs: other.jobs.or(self.jobs),
            deltas: other.deltas.or(self.deltas),
            kind: other.kind.or(self.kind),
            a: other.a.or(self.a),
            direction: other.direction.or(self.direction),
        }
    }
}

/// A complete run description, as echoed in the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    #[serde(flatten)]
    pub options: Options,
}

#[derive(Debug, Deserialize)]
struct FileConfig {
    #[serde(default)]
    command: Option<Command>,
    #[serde(flatten)]
    options: Options,
}

/// Reads a config file, or the `config` object of a manifest.
pub fn load_config(path: &Path) -> Result<(Option<Command>, Options)> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("{} is not valid JSON", path.display()))?;
    let value = match value.get("config") {
        Some(inner) if value.get("version").is_some() => inner.clone(),
        _ => value,
    };
    if !value.is_object() {
        bail!("config {} must hold a JSON object", path.display());
    }
    const KEYS: &[&str] = &[
        "command", "driver", "field", "p", "N", "seed", "tol", "out", "format", "jobs", "deltas", "kind", "a", "direction",
    ];
    if let Some(key) = value.as_object().unwrap().keys().find(|k| !KEYS.contains(&k.as_str())) {
        bail!("unknown config key `{key}` in {}", path.display());
    }
    let file: FileConfig = serde_json::from_value(value).with_context(|| format!("invalid config {}", path.display()))?;
    Ok((file.command, file.options))
}
