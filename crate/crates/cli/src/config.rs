//! Command-line flags, the optional TOML config file, and their merge.
//! Flags take precedence over the file.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use krr_impute::numerics::log_space;
use krr_impute::simulation::{Method, Model, SimConfig};
use krr_impute::{GcvVariant, ImputationConfig, KernelChoice};
use serde::Deserialize;

use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "krr-impute", version, about = "Kernel ridge regression imputation for missing responses")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the mean of a partially observed response column.
    Impute(ImputeArgs),
    /// Run a Monte Carlo study on a built-in model.
    Simulate(SimulateArgs),
    /// Estimate inverse response-probability weights.
    Ratio(RatioArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Sobolev,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GcvName {
    /// Residual over the trace (linear denominator).
    Linear,
    /// Residual over the squared trace.
    Squared,
}

impl From<GcvName> for GcvVariant {
    fn from(g: GcvName) -> Self {
        match g {
            GcvName::Linear => GcvVariant::LinearTrace,
            GcvName::Squared => GcvVariant::SquaredTrace,
        }
    }
}

/// `lo:hi:count` for a log-spaced grid, or an explicit comma list.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    List(Vec<f64>),
    #[serde(deserialize_with = "grid_from_str")]
    Spec(Vec<f64>),
}

impl Grid {
    fn values(self) -> Vec<f64> {
        match self {
            Grid::List(v) | Grid::Spec(v) => v,
        }
    }
}

fn parse_grid(s: &str) -> std::result::Result<Vec<f64>, String> {
    let values = if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        let [lo, hi, count] = parts.as_slice() else {
            return Err(format!("grid '{s}' must look like lo:hi:count"));
        };
        let lo: f64 = lo.trim().parse().map_err(|e| format!("grid lower end: {e}"))?;
        let hi: f64 = hi.trim().parse().map_err(|e| format!("grid upper end: {e}"))?;
        let count: usize = count.trim().parse().map_err(|e| format!("grid count: {e}"))?;
        if !(lo > 0.0 && hi >= lo) || count == 0 {
            return Err(format!("grid '{s}' needs 0 < lo <= hi and count >= 1"));
        }
        log_space(lo, hi, count)
    } else {
        s.split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| format!("grid value '{v}': {e}")))
            .collect::<std::result::Result<_, _>>()?
    };
    if values.is_empty() || values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(format!("grid '{s}' must hold positive finite values"));
    }
    Ok(values)
}

fn grid_from_str<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
    let s = String::deserialize(d)?;
    parse_grid(&s).map_err(serde::de::Error::custom)
}

impl FromStr for Grid {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        parse_grid(s).map(Grid::Spec)
    }
}

/// Estimator and run options shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML file with default values for any option (flags win).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (created if needed).
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub kernel: Option<KernelFamily>,
    /// Sobolev order.
    #[arg(long)]
    pub order: Option<usize>,
    /// Gaussian bandwidth on the unit-scaled inputs; median heuristic if absent.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long, value_enum)]
    pub gcv: Option<GcvName>,
    /// Fixed ridge penalty (skips GCV).
    #[arg(long)]
    pub lambda: Option<f64>,
    /// GCV grid, `lo:hi:count` or `a,b,c`.
    #[arg(long)]
    pub lambda_grid: Option<Grid>,
    /// Fixed density-ratio penalty (skips cross-validation).
    #[arg(long)]
    pub tau: Option<f64>,
    /// Cross-validation grid, `lo:hi:count` or `a,b,c`.
    #[arg(long)]
    pub tau_grid: Option<Grid>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Confidence levels, e.g. `0.90,0.95`.
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 0 or absent uses all logical cores.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Skip the weights and variance.
    #[arg(long)]
    pub no_variance: bool,
    /// Fit the regression without centering responses at their observed mean.
    #[arg(long)]
    pub no_center: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ImputeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, short)]
    pub input: Option<PathBuf>,
    /// Name of the response column; empty cells are missing.
    #[arg(long)]
    pub response: Option<String>,
    /// Covariate columns; defaults to every other column.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Model A-F.
    #[arg(long)]
    pub model: Option<Model>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Comma list of KRR, BSpline, Linear.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
    /// Interior knots per coordinate for the B-spline baseline.
    #[arg(long)]
    pub knots: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct RatioArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, short)]
    pub input: Option<PathBuf>,
    /// Name of the 0/1 response-indicator column.
    #[arg(long)]
    pub delta: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
}

/// Contents of a `--config` file. Keys match the long flag names.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct FileConfig {
    pub output: Option<PathBuf>,
    pub kernel: Option<KernelFamily>,
    pub order: Option<usize>,
    pub bandwidth: Option<f64>,
    pub gcv: Option<GcvName>,
    pub lambda: Option<f64>,
    pub lambda_grid: Option<Grid>,
    pub tau: Option<f64>,
    pub tau_grid: Option<Grid>,
    pub folds: Option<usize>,
    pub levels: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub no_variance: Option<bool>,
    pub no_center: Option<bool>,
    pub input: Option<PathBuf>,
    pub response: Option<String>,
    pub delta: Option<String>,
    pub covariates: Option<Vec<String>>,
    pub model: Option<Model>,
    pub n: Option<usize>,
    pub reps: Option<usize>,
    pub methods: Option<Vec<Method>>,
    pub knots: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        toml::from_str(&text).map_err(|source| CliError::Config { path: path.to_owned(), source })
    }
}

/// Fully resolved options shared by all subcommands.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub output: PathBuf,
    pub threads: usize,
    pub imputation: ImputationConfig<f64>,
}

fn required<T>(value: Option<T>, flag: &str) -> Result<T> {
    value.ok_or_else(|| CliError::Usage(format!("--{flag} is required (or set '{flag}' in the config file)")))
}

impl CommonArgs {
    pub fn resolve(&self, file: &FileConfig) -> Result<Resolved> {
        let output = required(self.output.clone().or_else(|| file.output.clone()), "output")?;
        let order = self.order.or(file.order).unwrap_or(2);
        let bandwidth = self.bandwidth.or(file.bandwidth);
        let kernel = match self.kernel.or(file.kernel).unwrap_or(KernelFamily::Sobolev) {
            KernelFamily::Sobolev => {
                if bandwidth.is_some() {
                    return Err(CliError::Usage("--bandwidth applies to the gaussian kernel only".into()));
                }
                KernelChoice::Sobolev { order }
            }
            KernelFamily::Gaussian => KernelChoice::Gaussian { bandwidth },
        };
        let defaults = ImputationConfig::<f64>::default();
        let levels = self.levels.clone().or_else(|| file.levels.clone()).unwrap_or(defaults.levels);
        if levels.is_empty() || levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
            return Err(CliError::Usage(format!("confidence levels must lie in (0, 1), got {levels:?}")));
        }
        let folds = self.folds.or(file.folds).unwrap_or(defaults.folds);
        if folds < 2 {
            return Err(CliError::Usage("--folds must be at least 2".into()));
        }
        let grid = |g: &Option<Grid>, f: &Option<Grid>, name: &str| -> Result<Option<Vec<f64>>> {
            match g.clone().or_else(|| f.clone()).map(Grid::values) {
                Some(v) if v.is_empty() || v.iter().any(|x| !(*x > 0.0 && x.is_finite())) => {
                    Err(CliError::Usage(format!("--{name} must hold positive finite values")))
                }
                other => Ok(other),
            }
        };
        let imputation = ImputationConfig {
            kernel,
            lambda: self.lambda.or(file.lambda),
            lambda_grid: grid(&self.lambda_grid, &file.lambda_grid, "lambda-grid")?,
            gcv: self.gcv.or(file.gcv).map_or(defaults.gcv, GcvVariant::from),
            center_response: !(self.no_center || file.no_center.unwrap_or(false)),
            tau: self.tau.or(file.tau),
            tau_grid: grid(&self.tau_grid, &file.tau_grid, "tau-grid")?,
            folds,
            seed: self.seed.or(file.seed).unwrap_or(0),
            levels,
            c_min: defaults.c_min,
            compute_variance: !(self.no_variance || file.no_variance.unwrap_or(false)),
        };
        Ok(Resolved { output, threads: self.threads.or(file.threads).unwrap_or(0), imputation })
    }
}

pub struct ImputeJob {
    pub run: Resolved,
    pub input: PathBuf,
    pub response: String,
    pub covariates: Option<Vec<String>>,
}

impl ImputeArgs {
    pub fn resolve(&self) -> Result<ImputeJob> {
        let file = FileConfig::load(self.common.config.as_deref())?;
        Ok(ImputeJob {
            run: self.common.resolve(&file)?,
            input: required(self.input.clone().or(file.input), "input")?,
            response: required(self.response.clone().or(file.response), "response")?,
            covariates: self.covariates.clone().or(file.covariates),
        })
    }
}

pub struct RatioJob {
    pub run: Resolved,
    pub input: PathBuf,
    pub delta: String,
    pub covariates: Option<Vec<String>>,
}

impl RatioArgs {
    pub fn resolve(&self) -> Result<RatioJob> {
        let file = FileConfig::load(self.common.config.as_deref())?;
        Ok(RatioJob {
            run: self.common.resolve(&file)?,
            input: required(self.input.clone().or(file.input), "input")?,
            delta: required(self.delta.clone().or(file.delta), "delta")?,
            covariates: self.covariates.clone().or(file.covariates),
        })
    }
}

pub struct SimulateJob {
    pub run: Resolved,
    pub config: SimConfig,
}

impl SimulateArgs {
    pub fn resolve(&self) -> Result<SimulateJob> {
        let file = FileConfig::load(self.common.config.as_deref())?;
        let run = self.common.resolve(&file)?;
        let model = required(self.model.or(file.model), "model")?;
        let mut config = SimConfig::new(
            model,
            self.n.or(file.n).unwrap_or(500),
            self.reps.or(file.reps).unwrap_or(100),
            run.imputation.seed,
        );
        if let Some(m) = self.methods.clone().or(file.methods) {
            let mut unique = Vec::new();
            for method in m {
                if !unique.contains(&method) {
                    unique.push(method);
                }
            }
            config.methods = unique;
        }
        if let Some(k) = self.knots.or(file.knots) {
            config.knots = k;
        }
        config.imputation = run.imputation.clone();
        config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(SimulateJob { run, config })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_spec_forms() {
        assert_eq!(parse_grid("1:100:3").unwrap().len(), 3);
        assert!((parse_grid("1:100:3").unwrap()[1] - 10.0).abs() < 1e-12);
        assert_eq!(parse_grid("0.5, 2").unwrap(), vec![0.5, 2.0]);
        assert!(parse_grid("0:1:3").is_err());
        assert!(parse_grid("-1,2").is_err());
        assert!(parse_grid("1:2").is_err());
    }

    #[test]
    fn file_config_accepts_strings_and_arrays() {
        let f: FileConfig =
            toml::from_str("lambda-grid = \"1e-3:1:4\"\ntau-grid = [0.1, 1.0]\nmodel = \"B\"\nmethods = [\"KRR\"]\n")
                .unwrap();
        assert_eq!(f.lambda_grid.unwrap().values().len(), 4);
        assert_eq!(f.tau_grid.unwrap().values(), vec![0.1, 1.0]);
        assert_eq!(f.model, Some(Model::B));
        assert!(toml::from_str::<FileConfig>("bogus = 1").is_err());
    }

    #[test]
    fn flags_override_file() {
        let file = FileConfig { seed: Some(3), folds: Some(4), output: Some("a".into()), ..Default::default() };
        let args = CommonArgs { seed: Some(9), ..Default::default() };
        let r = args.resolve(&file).unwrap();
        assert_eq!(r.imputation.seed, 9);
        assert_eq!(r.imputation.folds, 4);
        assert_eq!(r.output, PathBuf::from("a"));
    }
}
