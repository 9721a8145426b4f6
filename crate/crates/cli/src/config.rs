use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::CliError;
use crate::output::Inputs;

/// Regularization strength used when neither `--lambda` nor `--lambda0` is set.
pub const DEFAULT_LAMBDA0: f64 = 2.0;

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct CostArgs {
    /// Cost matrix c_p as headerless CSV (N x N, or N^2 values row-major).
    #[arg(long, conflicts_with = "grid")]
    pub cost: Option<PathBuf>,
    /// Use the L x L grid on [0, extent]^2 instead of a cost file.
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub extent: f64,
    /// euclidean | sqeuclidean
    #[arg(long, default_value = "euclidean")]
    pub metric: String,
    /// Cost exponent; with --cost the file already holds c_p and p only sets the root.
    #[arg(long, default_value_t = 1.0)]
    pub p: f64,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct RegArgs {
    /// entropy | burg | fermi | beta:<b> | lpq:<q>
    #[arg(long, default_value = "entropy")]
    pub reg: String,
    /// Absolute regularization strength.
    #[arg(long, conflicts_with = "lambda0")]
    pub lambda: Option<f64>,
    /// Strength relative to the median cost, lambda = lambda0 * q50(c) [default: 2].
    #[arg(long)]
    pub lambda0: Option<f64>,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    #[arg(long, default_value_t = 100_000)]
    pub max_iter: usize,
}

impl RegArgs {
    fn finalize(&mut self) -> Result<(), CliError> {
        match (self.lambda, self.lambda0) {
            (Some(_), Some(_)) => Err(CliError::usage("give either lambda or lambda0, not both")),
            (None, None) => {
                self.lambda0 = Some(DEFAULT_LAMBDA0);
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct MarginalArgs {
    /// First marginal r (headerless CSV, one weight per line).
    #[arg(long)]
    pub r: Option<PathBuf>,
    /// Second marginal s.
    #[arg(long)]
    pub s: Option<PathBuf>,
    /// Rescale marginals to sum to one instead of rejecting them.
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SolveConfig {
    #[command(flatten)]
    #[serde(flatten)]
    pub cost: CostArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub reg: RegArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub marginals: MarginalArgs,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    One,
    Two,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct VarianceConfig {
    #[command(flatten)]
    #[serde(flatten)]
    pub cost: CostArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub reg: RegArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub marginals: MarginalArgs,
    #[arg(long, value_enum, default_value = "one")]
    pub mode: ModeArg,
    /// Two-sample weight m/(n+m); taken from --n and --m when absent.
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    /// Also write the plan gradient and plan covariance as CSV.
    #[arg(long)]
    pub matrices: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct CiConfig {
    #[command(flatten)]
    #[serde(flatten)]
    pub cost: CostArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub reg: RegArgs,
    /// Empirical r_n (and s_m when --m is given).
    #[command(flatten)]
    #[serde(flatten)]
    pub marginals: MarginalArgs,
    /// Sample size behind r.
    #[arg(long)]
    pub n: Option<usize>,
    /// Sample size behind s; switches to the two-sample interval.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapConfig {
    #[command(flatten)]
    #[serde(flatten)]
    pub cost: CostArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub reg: RegArgs,
    /// Observed sample as 0-based point indices, one per line.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Empirical r_n given directly (needs --n).
    #[arg(long, conflicts_with = "data")]
    pub r: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Fixed second marginal.
    #[arg(long)]
    pub s: Option<PathBuf>,
    #[arg(long)]
    pub normalize: bool,
    /// Number of bootstrap replicates.
    #[arg(long = "B", default_value_t = 500)]
    #[serde(rename = "B")]
    pub b: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandArg {
    Gaussian,
    Bootstrap,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct RcolConfig {
    /// First channel (.csv or .pgm).
    #[arg(long = "imgA")]
    #[serde(rename = "imgA")]
    pub img_a: Option<PathBuf>,
    /// Second channel.
    #[arg(long = "imgB")]
    #[serde(rename = "imgB")]
    pub img_b: Option<PathBuf>,
    /// Optional second pair; the difference of the two curves is reported.
    #[arg(long = "imgC")]
    #[serde(rename = "imgC")]
    pub img_c: Option<PathBuf>,
    #[arg(long = "imgD")]
    #[serde(rename = "imgD")]
    pub img_d: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub pixel_size: f64,
    /// Points drawn from each image [default: 50 sqrt(N)].
    #[arg(long)]
    pub resample: Option<usize>,
    #[arg(long, default_value = "euclidean")]
    pub metric: String,
    #[arg(long, default_value_t = 1.0)]
    pub p: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub reg: RegArgs,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value = "bootstrap")]
    pub band: BandArg,
    #[arg(long = "B", default_value_t = 100)]
    #[serde(rename = "B")]
    pub b: usize,
    /// Gaussian draws for the band quantile.
    #[arg(long, default_value_t = 2000)]
    pub draws: usize,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Clone)]
pub struct McArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replicates: Option<usize>,
}

pub trait Finalize {
    fn finalize(&mut self) -> Result<(), CliError> {
        Ok(())
    }
}

impl Finalize for SolveConfig {
    fn finalize(&mut self) -> Result<(), CliError> {
        self.reg.finalize()
    }
}

impl Finalize for VarianceConfig {
    fn finalize(&mut self) -> Result<(), CliError> {
        self.reg.finalize()
    }
}

impl Finalize for CiConfig {
    fn finalize(&mut self) -> Result<(), CliError> {
        self.reg.finalize()
    }
}

impl Finalize for BootstrapConfig {
    fn finalize(&mut self) -> Result<(), CliError> {
        self.reg.finalize()
    }
}

impl Finalize for RcolConfig {
    fn finalize(&mut self) -> Result<(), CliError> {
        self.reg.finalize()
    }
}

impl Finalize for rot_core::inference::McConfig {}

/// Read a config file: either a bare object of settings or a manifest
/// written by an earlier run of the same subcommand.
pub fn read_config(path: &Path, subcommand: &str, inputs: &mut Inputs) -> Result<Map<String, Value>, CliError> {
    inputs.digest(path)?;
    let text = std::fs::read_to_string(path)?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    let Value::Object(mut map) = value else {
        return Err(CliError::usage(format!("{} is not a JSON object", path.display())));
    };
    if let (Some(Value::String(sub)), Some(Value::Object(_))) = (map.get("subcommand"), map.get("config")) {
        if sub != subcommand {
            return Err(CliError::usage(format!(
                "{} is a manifest of `{sub}`, not `{subcommand}`",
                path.display()
            )));
        }
        let Some(Value::Object(cfg)) = map.remove("config") else {
            unreachable!()
        };
        return Ok(cfg);
    }
    Ok(map)
}

/// Overlay `overrides` on the flag values; unknown keys are rejected.
pub fn merge<T: Serialize + DeserializeOwned + Finalize>(base: &T, overrides: &Map<String, Value>) -> Result<T, CliError> {
    let Value::Object(mut map) = serde_json::to_value(base)? else {
        unreachable!("configs serialize to objects")
    };
    for (k, v) in overrides {
        if !map.contains_key(k) {
            return Err(CliError::usage(format!("unknown config key `{k}`")));
        }
        // Setting one form of the strength in the file replaces the other flag.
        for (a, b) in [("lambda", "lambda0"), ("lambda0", "lambda")] {
            if k == a && !v.is_null() && !overrides.contains_key(b) && map.contains_key(b) {
                map.insert(b.into(), Value::Null);
            }
        }
        map.insert(k.clone(), v.clone());
    }
    let mut cfg: T = serde_json::from_value(Value::Object(map)).map_err(|e| CliError::usage(format!("config: {e}")))?;
    cfg.finalize()?;
    Ok(cfg)
}
