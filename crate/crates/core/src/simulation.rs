//! Monte Carlo harness: data generators for Models A–F under a logistic
//! response mechanism, and the replicate driver with its summary table.
//!
//! Covariates are i.i.d. `U(1, 3)⁴`. Continuous models add `√3 ε`,
//! `ε ~ N(0, 1)`; binary models draw `y ~ Bernoulli(expit(index))`. Units
//! respond with probability `expit(x'β + 2.5)`, `β = (−1, 0.5, −0.25, −0.1)`.
//!
//! Every replicate draws from its own ChaCha stream keyed by `(seed, rep)`,
//! so results do not depend on the number of worker threads.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{out_of_unit_range, BSplineModel, LinearModel, DEFAULT_KNOTS};
use crate::error::{Error, Result};
use crate::inference::{estimate, ImputationConfig};
use crate::sample::{impute_with, LabeledSample, RegressionFunction};

pub const DIM: usize = 4;
pub const BETA: [f64; DIM] = [-1.0, 0.5, -0.25, -0.1];
pub const RESPONSE_OFFSET: f64 = 2.5;
pub const NOISE_SD: f64 = 1.732_050_807_568_877_2;
pub const MIN_N: usize = 50;
/// Draws behind the Monte Carlo truth of the binary models.
pub const TRUTH_DRAWS: usize = 10_000_000;
const TRUTH_SEED: u64 = 0x7275_7468;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Model {
    A,
    B,
    C,
    D,
    E,
    F,
}

impl Model {
    pub const ALL: [Model; 6] = [Model::A, Model::B, Model::C, Model::D, Model::E, Model::F];

    pub fn is_binary(self) -> bool {
        matches!(self, Model::D | Model::E | Model::F)
    }

    /// Regression mean for A–C, logit of the success probability for D–F.
    pub fn index(self, x: &[f64]) -> f64 {
        let [x1, x2, x3, x4] = [x[0], x[1], x[2], x[3]];
        match self {
            Model::A => 3.0 + 2.5 * x1 + 2.75 * x2 + 2.5 * x3 + 2.25 * x4,
            Model::B => 3.0 + x1 * x1 * x2.powi(3) * x3 / 35.0 + 0.1 * x4,
            Model::C => 3.0 + x1 * x1 * x2.powi(3) * x3 * x4 * x4 / 180.0,
            Model::D => 0.5 + x1 * x1 * x2.powi(3) * x3 / 35.0 + 0.1 * x4,
            Model::E => 0.5 + x1 * x1 * x2.powi(3) * x3 * x4 * x4 / 180.0,
            Model::F => 0.5 + 0.15 * x1 * x2 * x3 * x3 + 0.4 * x2 * x3,
        }
    }

    /// `E(Y | x)`.
    pub fn mean(self, x: &[f64]) -> f64 {
        if self.is_binary() {
            expit(self.index(x))
        } else {
            self.index(x)
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Model::ALL
            .into_iter()
            .find(|m| m.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidInput(format!("unknown model '{s}' (expected A-F)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "KRR")]
    Krr,
    BSpline,
    Linear,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Krr, Method::BSpline, Method::Linear];

    pub fn name(self) -> &'static str {
        match self {
            Method::Krr => "KRR",
            Method::BSpline => "BSpline",
            Method::Linear => "Linear",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidInput(format!("unknown method '{s}' (expected KRR, BSpline, Linear)")))
    }
}

pub fn expit(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// `P(δ = 1 | x) = expit(x'β + 2.5)`.
pub fn response_probability(x: &[f64]) -> f64 {
    expit(x.iter().zip(BETA).map(|(a, b)| a * b).sum::<f64>() + RESPONSE_OFFSET)
}

/// The random stream of replicate `rep`.
pub fn replicate_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// One simulated data set with the quantities only a simulation knows.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    /// Missing responses are stored as NaN.
    pub sample: LabeledSample<f64>,
    pub y_full: Array1<f64>,
    /// `E(Y | xᵢ)`.
    pub mean: Array1<f64>,
    /// `P(δ = 1 | xᵢ)`.
    pub propensity: Array1<f64>,
}

impl SimulatedData {
    /// `θ̃ = n⁻¹ Σ { m(xᵢ) + δᵢ / π(xᵢ) (yᵢ − m(xᵢ)) }` with the true `m` and `π`.
    pub fn oracle_estimate(&self) -> f64 {
        let n = self.mean.len();
        let delta = self.sample.delta();
        (0..n)
            .map(|i| {
                let m = self.mean[i];
                if delta[i] {
                    m + (self.y_full[i] - m) / self.propensity[i]
                } else {
                    m
                }
            })
            .sum::<f64>()
            / n as f64
    }
}

/// Draws `n` units; per unit the order is `x₁..x₄`, outcome, response.
pub fn generate_with<R: Rng + ?Sized>(model: Model, n: usize, rng: &mut R) -> Result<SimulatedData> {
    let mut x = Array2::zeros((n, DIM));
    let mut y_full = Array1::zeros(n);
    let mut mean = Array1::zeros(n);
    let mut propensity = Array1::zeros(n);
    let mut delta = Vec::with_capacity(n);
    for i in 0..n {
        let mut row = [0.0; DIM];
        for v in row.iter_mut() {
            *v = rng.random_range(1.0..3.0);
        }
        let m = model.mean(&row);
        y_full[i] = if model.is_binary() {
            if rng.random::<f64>() < m {
                1.0
            } else {
                0.0
            }
        } else {
            let eps: f64 = rng.sample(StandardNormal);
            m + NOISE_SD * eps
        };
        let p = response_probability(&row);
        delta.push(rng.random::<f64>() < p);
        mean[i] = m;
        propensity[i] = p;
        x.row_mut(i).assign(&Array1::from(row.to_vec()));
    }
    if !delta.iter().any(|&d| d) {
        delta[0] = true;
    }
    let y = Array1::from_shape_fn(n, |i| if delta[i] { y_full[i] } else { f64::NAN });
    let sample = LabeledSample::new(x, y, delta)?;
    Ok(SimulatedData { sample, y_full, mean, propensity })
}

pub fn generate(model: Model, n: usize, seed: u64, rep: u64) -> Result<SimulatedData> {
    generate_with(model, n, &mut replicate_rng(seed, rep))
}

/// `θ = E(Y)`. Closed form for the polynomial means of A–C; for D–F a
/// cached Monte Carlo average of `expit(index)` over [`TRUTH_DRAWS`] draws.
pub fn true_theta(model: Model) -> f64 {
    // moments of U(1, 3)
    const E1: f64 = 2.0;
    const E2: f64 = 13.0 / 3.0;
    const E3: f64 = 10.0;
    match model {
        Model::A => 3.0 + (2.5 + 2.75 + 2.5 + 2.25) * E1,
        Model::B => 3.0 + E2 * E3 * E1 / 35.0 + 0.1 * E1,
        Model::C => 3.0 + E2 * E3 * E1 * E2 / 180.0,
        _ => binary_truth(model).0,
    }
}

/// Monte Carlo truth and its standard error for a binary model.
pub fn binary_truth(model: Model) -> (f64, f64) {
    static CACHE: [OnceLock<(f64, f64)>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
    let slot = match model {
        Model::D => 0,
        Model::E => 1,
        Model::F => 2,
        _ => return (true_theta(model), 0.0),
    };
    *CACHE[slot].get_or_init(|| {
        let mut rng = replicate_rng(TRUTH_SEED, slot as u64);
        let (mut sum, mut sumsq) = (0.0, 0.0);
        for _ in 0..TRUTH_DRAWS {
            let mut row = [0.0; DIM];
            for v in row.iter_mut() {
                *v = rng.random_range(1.0..3.0);
            }
            let p = model.mean(&row);
            sum += p;
            sumsq += p * p;
        }
        let n = TRUTH_DRAWS as f64;
        let mean = sum / n;
        // Var(Y) = E p (1 − p) + Var p = mean − mean²
        let var_y = (mean - mean * mean).max(sumsq / n - mean * mean);
        (mean, (var_y / n).sqrt())
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub model: Model,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub imputation: ImputationConfig<f64>,
    pub knots: usize,
}

impl SimConfig {
    pub fn new(model: Model, n: usize, reps: usize, seed: u64) -> Self {
        Self {
            model,
            n,
            reps,
            seed,
            methods: Method::ALL.to_vec(),
            imputation: ImputationConfig::default(),
            knots: DEFAULT_KNOTS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < MIN_N {
            return Err(Error::InvalidInput(format!("n must be at least {MIN_N}, got {}", self.n)));
        }
        if self.reps == 0 {
            return Err(Error::InvalidInput("need at least one replicate".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidInput("no methods selected".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodEstimate {
    pub method: Method,
    pub theta_hat: f64,
    pub variance_hat: Option<f64>,
    /// Per confidence level, whether the interval covers `θ`.
    pub covered: Vec<bool>,
    pub lambda: Option<f64>,
    pub tau: Option<f64>,
    pub out_of_range: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateResult {
    pub rep: usize,
    pub oracle: f64,
    pub complete_case: f64,
    pub estimates: Vec<MethodEstimate>,
}

fn derived_seed(seed: u64, rep: u64) -> u64 {
    replicate_rng(seed ^ 0x5eed_f01d, rep).random()
}

fn baseline_estimate<M: RegressionFunction<f64>>(
    method: Method,
    model: &M,
    data: &SimulatedData,
) -> Result<MethodEstimate> {
    let theta_hat = impute_with(model, &data.sample)?;
    let missing = data.sample.missing_indices();
    let out_of_range = if missing.is_empty() {
        0
    } else {
        out_of_unit_range(model.predict(data.sample.x().select(Axis(0), &missing).view())?.view())
    };
    Ok(MethodEstimate {
        method,
        theta_hat,
        variance_hat: None,
        covered: Vec::new(),
        lambda: None,
        tau: None,
        out_of_range,
    })
}

/// Generates replicate `rep` and fits every configured method.
pub fn run_replicate(config: &SimConfig, rep: usize) -> Result<ReplicateResult> {
    let data = generate(config.model, config.n, config.seed, rep as u64)?;
    let theta = true_theta(config.model);
    let mut estimates = Vec::with_capacity(config.methods.len());
    for &method in &config.methods {
        let est = match method {
            Method::Krr => {
                let cfg = ImputationConfig { seed: derived_seed(config.seed, rep as u64), ..config.imputation.clone() };
                let r = estimate(&data.sample, &cfg)?;
                let missing = data.sample.missing_indices();
                MethodEstimate {
                    method,
                    theta_hat: r.theta_hat,
                    variance_hat: r.variance_hat,
                    covered: r.intervals.iter().map(|ci| ci.contains(theta)).collect(),
                    lambda: Some(r.lambda),
                    tau: r.tau,
                    out_of_range: out_of_unit_range(r.m_hat.select(Axis(0), &missing).view()),
                }
            }
            Method::BSpline => baseline_estimate(method, &BSplineModel::fit(&data.sample, config.knots)?, &data)?,
            Method::Linear => baseline_estimate(method, &LinearModel::fit(&data.sample)?, &data)?,
        };
        estimates.push(est);
    }
    Ok(ReplicateResult {
        rep,
        oracle: data.oracle_estimate(),
        complete_case: data.sample.complete_case_mean(),
        estimates,
    })
}

/// All replicates in index order, each with its own outcome.
pub fn run_replicates(config: &SimConfig) -> Vec<Result<ReplicateResult>> {
    (0..config.reps).into_par_iter().map(|rep| run_replicate(config, rep)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coverage {
    pub level: f64,
    pub rate: f64,
    pub mc_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: Method,
    pub reps: usize,
    pub mean: f64,
    pub bias: f64,
    /// Sample variance of `θ̂` (denominator `R − 1`); 0 when `R = 1`.
    pub variance: f64,
    pub mse: f64,
    pub bias_se: f64,
    pub variance_se: f64,
    pub mse_se: f64,
    /// `R = 1`: variance and standard errors are not informative.
    pub degenerate: bool,
    pub mean_variance_hat: Option<f64>,
    /// `mean(V̂) / Var(θ̂) − 1`.
    pub relative_bias: Option<f64>,
    pub relative_bias_se: Option<f64>,
    pub coverage: Vec<Coverage>,
    /// `mean |θ̂ − θ̃|` against the oracle linearization.
    pub mean_abs_oracle_diff: f64,
    pub out_of_range: usize,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

/// Summaries per method over successful replicates.
pub fn aggregate(theta: f64, levels: &[f64], methods: &[Method], results: &[ReplicateResult]) -> Vec<MethodSummary> {
    methods
        .iter()
        .filter_map(|&method| {
            let rows: Vec<(&MethodEstimate, f64)> = results
                .iter()
                .filter_map(|r| r.estimates.iter().find(|e| e.method == method).map(|e| (e, r.oracle)))
                .collect();
            if rows.is_empty() {
                return None;
            }
            let reps = rows.len();
            let rf = reps as f64;
            let thetas: Vec<f64> = rows.iter().map(|(e, _)| e.theta_hat).collect();
            let m = mean(&thetas);
            let variance = sample_variance(&thetas);
            let sq: Vec<f64> = thetas.iter().map(|t| (t - theta) * (t - theta)).collect();
            let degenerate = reps < 2;
            let se = |var: f64| if degenerate { 0.0 } else { (var / rf).sqrt() };
            let variance_se = if degenerate { 0.0 } else { variance * (2.0 / (rf - 1.0)).sqrt() };

            let vhats: Option<Vec<f64>> = rows.iter().map(|(e, _)| e.variance_hat).collect();
            let (mean_variance_hat, relative_bias, relative_bias_se) = match vhats {
                Some(v) if !degenerate && variance > 0.0 => {
                    let mv = mean(&v);
                    let mv_se = (sample_variance(&v) / rf).sqrt();
                    let rb = mv / variance - 1.0;
                    let rb_se =
                        ((mv_se / variance).powi(2) + (mv / (variance * variance) * variance_se).powi(2)).sqrt();
                    (Some(mv), Some(rb), Some(rb_se))
                }
                Some(v) => (Some(mean(&v)), None, None),
                None => (None, None, None),
            };
            let coverage = levels
                .iter()
                .enumerate()
                .filter_map(|(k, &level)| {
                    let hits: Option<Vec<bool>> = rows.iter().map(|(e, _)| e.covered.get(k).copied()).collect();
                    hits.map(|h| {
                        let rate = h.iter().filter(|&&c| c).count() as f64 / rf;
                        Coverage { level, rate, mc_se: (rate * (1.0 - rate) / rf).sqrt() }
                    })
                })
                .collect();
            Some(MethodSummary {
                method,
                reps,
                mean: m,
                bias: m - theta,
                variance,
                mse: mean(&sq),
                bias_se: se(variance),
                variance_se,
                mse_se: se(sample_variance(&sq)),
                degenerate,
                mean_variance_hat,
                relative_bias,
                relative_bias_se,
                coverage,
                mean_abs_oracle_diff: mean(&rows.iter().map(|(e, o)| (e.theta_hat - o).abs()).collect::<Vec<_>>()),
                out_of_range: rows.iter().map(|(e, _)| e.out_of_range).sum(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub rep: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub model: Model,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub theta: f64,
    /// Standard error of `theta` (0 when exact).
    pub theta_se: f64,
    pub levels: Vec<f64>,
    pub failures: Vec<Failure>,
    pub methods: Vec<MethodSummary>,
}

/// Runs all replicates and aggregates them. More than 1% failed replicates
/// is an error; fewer are excluded and listed in the report.
pub fn run_mc(config: &SimConfig) -> Result<(SimReport, Vec<ReplicateResult>)> {
    config.validate()?;
    let theta = true_theta(config.model);
    let theta_se = if config.model.is_binary() { binary_truth(config.model).1 } else { 0.0 };
    let mut ok = Vec::with_capacity(config.reps);
    let mut failures = Vec::new();
    for (rep, r) in run_replicates(config).into_iter().enumerate() {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => {
                log::warn!("replicate {rep} failed: {e}");
                failures.push(Failure { rep, error: e.to_string() });
            }
        }
    }
    if failures.len() * 100 > config.reps {
        return Err(Error::TooManyFailures {
            failed: failures.len(),
            total: config.reps,
            first: failures[0].error.clone(),
        });
    }
    if ok.is_empty() {
        return Err(Error::TooManyFailures { failed: 0, total: config.reps, first: "no replicates".into() });
    }
    let levels = if config.imputation.compute_variance { config.imputation.levels.clone() } else { Vec::new() };
    let methods = aggregate(theta, &levels, &config.methods, &ok);
    let report = SimReport {
        model: config.model,
        n: config.n,
        reps: config.reps,
        seed: config.seed,
        theta,
        theta_se,
        levels,
        failures,
        methods,
    };
    Ok((report, ok))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_a_at_ones() {
        assert_eq!(Model::A.mean(&[1.0; 4]), 13.0);
    }

    #[test]
    fn response_probability_at_twos() {
        assert!((response_probability(&[2.0; 4]) - expit(0.8)).abs() < 1e-15);
        assert!((response_probability(&[2.0; 4]) - 0.6900).abs() < 1e-4);
    }

    #[test]
    fn parse_names() {
        assert_eq!("c".parse::<Model>().unwrap(), Model::C);
        assert!("G".parse::<Model>().is_err());
        assert_eq!("krr".parse::<Method>().unwrap(), Method::Krr);
        assert_eq!("BSpline".parse::<Method>().unwrap(), Method::BSpline);
    }

    #[test]
    fn model_a_truth() {
        assert_eq!(true_theta(Model::A), 23.0);
    }

    #[test]
    fn streams_are_independent_and_repeatable() {
        let a = generate(Model::B, 60, 3, 0).unwrap();
        let b = generate(Model::B, 60, 3, 0).unwrap();
        let c = generate(Model::B, 60, 3, 1).unwrap();
        assert_eq!(a.y_full, b.y_full);
        assert_ne!(a.y_full, c.y_full);
        assert!(a.sample.x().iter().all(|v| (1.0..3.0).contains(v)));
    }

    #[test]
    fn missing_responses_are_hidden() {
        let d = generate(Model::A, 100, 1, 0).unwrap();
        for (y, &r) in d.sample.y().iter().zip(d.sample.delta()) {
            assert_eq!(y.is_nan(), !r);
        }
    }

    #[test]
    fn binary_outcomes() {
        let d = generate(Model::F, 200, 1, 0).unwrap();
        assert!(d.y_full.iter().all(|v| *v == 0.0 || *v == 1.0));
    }

    #[test]
    fn single_replicate_is_degenerate() {
        let mut cfg = SimConfig::new(Model::A, 60, 1, 5);
        cfg.methods = vec![Method::Linear];
        let (report, reps) = run_mc(&cfg).unwrap();
        let s = &report.methods[0];
        assert!(s.degenerate);
        assert_eq!(s.variance, 0.0);
        assert!((s.bias - (reps[0].estimates[0].theta_hat - 23.0)).abs() < 1e-12);
    }

    #[test]
    fn mse_identity() {
        let mut cfg = SimConfig::new(Model::B, 80, 12, 2);
        cfg.methods = vec![Method::Linear, Method::BSpline];
        let (report, _) = run_mc(&cfg).unwrap();
        for s in &report.methods {
            let r = s.reps as f64;
            assert!((s.mse - (s.bias * s.bias + s.variance * (r - 1.0) / r)).abs() < 1e-12);
        }
    }

    #[test]
    fn too_small_n_rejected() {
        assert!(SimConfig::new(Model::A, 10, 1, 0).validate().is_err());
    }
}
