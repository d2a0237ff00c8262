//! Run settings: built-in defaults, overridden by an optional TOML file,
//! overridden by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, ValueEnum};
use radflow::retraction::RetractionKind;
use radflow::solvers::{InitKind, SolverConfig};
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkFormat {
    Matpower,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutFormat {
    Csv,
    Json,
}

/// Keys accepted in the `--config` file. Every key is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub network: Option<PathBuf>,
    pub format: Option<NetworkFormat>,
    pub method: Option<String>,
    pub reference: Option<String>,
    pub init: Option<String>,
    pub retraction: Option<String>,
    pub load_scale: Option<f64>,
    pub eps_grad: Option<f64>,
    pub eps_volt: Option<f64>,
    pub alpha_bar: Option<f64>,
    pub beta: Option<f64>,
    pub sigma: Option<f64>,
    pub max_iter: Option<usize>,
    pub max_backtracks: Option<usize>,
    pub out: Option<PathBuf>,
    pub out_format: Option<OutFormat>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }
}

/// Flags shared by every subcommand.
#[derive(Debug, Default, Args)]
pub struct CommonArgs {
    /// Network file (MATPOWER `.m` or JSON).
    #[arg(long)]
    pub network: Option<PathBuf>,
    /// Network file format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    pub format: Option<NetworkFormat>,
    /// TOML file with default values for any of these flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Starting point: flat or warm.
    #[arg(long)]
    pub init: Option<String>,
    /// Multiply every load by this factor.
    #[arg(long)]
    pub load_scale: Option<f64>,
    #[arg(long)]
    pub eps_grad: Option<f64>,
    #[arg(long)]
    pub eps_volt: Option<f64>,
    #[arg(long)]
    pub alpha_bar: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Output directory; reports go to standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub out_format: Option<OutFormat>,
}

/// Fully resolved settings shared by all subcommands.
#[derive(Debug, Clone)]
pub struct Settings {
    pub network: PathBuf,
    pub format: NetworkFormat,
    pub load_scale: f64,
    pub solver: SolverConfig,
    pub out: Option<PathBuf>,
    pub out_format: OutFormat,
}

impl Settings {
    /// Merge `flags` over `file` over the defaults. `retraction` is the
    /// flag value, if the subcommand has one.
    pub fn resolve(flags: &CommonArgs, file: &FileConfig, retraction: Option<&str>) -> anyhow::Result<Self> {
        let Some(network) = flags.network.clone().or_else(|| file.network.clone()) else {
            bail!("no network given (use --network)");
        };
        let format = match flags.format.or(file.format) {
            Some(f) => f,
            None => infer_format(&network),
        };
        let mut solver = SolverConfig::default();
        if let Some(init) = flags.init.as_deref().or(file.init.as_deref()) {
            solver.init = init.parse::<InitKind>()?;
        }
        if let Some(r) = retraction.or(file.retraction.as_deref()) {
            solver.retraction = Some(r.parse::<RetractionKind>()?);
        }
        if let Some(v) = flags.eps_grad.or(file.eps_grad) {
            solver.eps_grad = v;
        }
        if let Some(v) = flags.eps_volt.or(file.eps_volt) {
            solver.eps_volt = v;
        }
        if let Some(v) = flags.max_iter.or(file.max_iter) {
            solver.max_iter = v;
        }
        solver.armijo.alpha_bar = flags.alpha_bar.or(file.alpha_bar);
        if let Some(v) = flags.beta.or(file.beta) {
            solver.armijo.beta = v;
        }
        if let Some(v) = flags.sigma.or(file.sigma) {
            solver.armijo.sigma = v;
        }
        if let Some(v) = file.max_backtracks {
            solver.armijo.max_backtracks = v;
        }
        solver.validate()?;
        let load_scale = flags.load_scale.or(file.load_scale).unwrap_or(1.0);
        if !(load_scale >= 0.0 && load_scale.is_finite()) {
            bail!("load scale {load_scale} must be a non-negative number");
        }
        Ok(Settings {
            network,
            format,
            load_scale,
            solver,
            out: flags.out.clone().or_else(|| file.out.clone()),
            out_format: flags.out_format.or(file.out_format).unwrap_or(OutFormat::Csv),
        })
    }
}

fn infer_format(path: &Path) -> NetworkFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("json") => NetworkFormat::Json,
        _ => NetworkFormat::Matpower,
    }
}
