use std::fs;
use std::path::Path;

use krr_impute::density_ratio::{cv_select_tau_on_gram, default_tau_grid, fit_ratio_on_gram, RatioOptions};
use krr_impute::inference::{confidence_interval, estimate, ConfidenceInterval};
use krr_impute::kernels::{gram_symmetric, InputScaler};
use krr_impute::simulation::{run_mc, Method, MethodSummary, ReplicateResult, SimReport};
use krr_impute::{ImputationReport, LabeledSample};
use ndarray::{Array1, Axis};
use serde::Serialize;

use crate::config::{ImputeJob, RatioJob, SimulateJob};
use crate::data::Table;
use crate::error::{CliError, Result};

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(CliError::io(path))
}

/// `90`, `95`, `97.5`.
fn level_label(level: f64) -> String {
    format!("{}", (level * 1e8).round() / 1e6)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

#[derive(Debug, Serialize)]
struct CompleteCase {
    estimate: f64,
    std_error: Option<f64>,
    intervals: Vec<ConfidenceInterval<f64>>,
}

fn complete_case(y: &Array1<f64>, delta: &[bool], levels: &[f64]) -> Result<CompleteCase> {
    let obs: Vec<f64> = y.iter().zip(delta).filter(|(_, &d)| d).map(|(v, _)| *v).collect();
    let n1 = obs.len() as f64;
    let mean = obs.iter().sum::<f64>() / n1;
    if obs.len() < 2 {
        return Ok(CompleteCase { estimate: mean, std_error: None, intervals: Vec::new() });
    }
    let var = obs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n1 - 1.0) / n1;
    let intervals = levels.iter().map(|&l| confidence_interval(mean, var, l)).collect::<krr_impute::Result<_>>()?;
    Ok(CompleteCase { estimate: mean, std_error: Some(var.sqrt()), intervals })
}

#[derive(Serialize)]
struct ImputeOutput<'a> {
    input: &'a Path,
    response: &'a str,
    covariates: Vec<&'a str>,
    #[serde(flatten)]
    report: &'a ImputationReport<f64>,
    complete_case: CompleteCase,
}

fn write_weights(path: &Path, delta: &[bool], omega: &Array1<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["row", "delta", "omega", "p_hat"])?;
    for (i, &o) in omega.iter().enumerate() {
        w.write_record([i.to_string(), u8::from(delta[i]).to_string(), o.to_string(), (1.0 / o).to_string()])?;
    }
    w.flush().map_err(CliError::io(path))
}

pub fn impute(job: &ImputeJob) -> Result<()> {
    let table = Table::read(&job.input)?;
    let rcol = table.column(&job.response)?;
    let cols = table.covariate_columns(job.covariates.as_deref(), rcol)?;
    let x = table.covariates(&cols)?;
    let (y, delta) = table.response(rcol)?;
    if !delta.iter().any(|&d| d) {
        return Err(CliError::AllMissing);
    }
    let sample = LabeledSample::new(x, y.clone(), delta.clone())?;
    let config = &job.run.imputation;
    let report = estimate(&sample, config)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }

    let out = &job.run.output;
    prepare_dir(out)?;
    let cc = complete_case(&y, &delta, &config.levels)?;

    let path = out.join("table.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec!["estimator".to_string(), "estimate".into(), "std_error".into()];
    for &l in &config.levels {
        header.push(format!("lower_{}", level_label(l)));
        header.push(format!("upper_{}", level_label(l)));
    }
    w.write_record(&header)?;
    for (name, est, se, intervals) in [
        ("Complete", cc.estimate, cc.std_error, &cc.intervals),
        ("KRR", report.theta_hat, report.std_error, &report.intervals),
    ] {
        let mut row = vec![name.to_string(), est.to_string(), opt(se)];
        for k in 0..config.levels.len() {
            let ci = intervals.get(k);
            row.push(opt(ci.map(|c| c.lower)));
            row.push(opt(ci.map(|c| c.upper)));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(CliError::io(&path))?;

    table.write_imputed(&out.join("imputed.csv"), rcol, &delta, &report.m_hat)?;
    if let Some(omega) = &report.omega {
        write_weights(&out.join("weights.csv"), &delta, omega)?;
    }
    println!(
        "theta_hat {} (se {}), complete-case {}; n = {}, missing = {}",
        report.theta_hat,
        opt(report.std_error),
        cc.estimate,
        report.n,
        report.n0
    );
    let output = ImputeOutput {
        input: &job.input,
        response: &job.response,
        covariates: cols.iter().map(|&c| &table.headers[c]).collect(),
        report: &report,
        complete_case: cc,
    };
    write_json(&out.join("report.json"), &output)
}

type Cell = Box<dyn Fn(&MethodSummary) -> String>;

fn table_rows(report: &SimReport) -> Vec<(String, Cell)> {
    let mut rows: Vec<(String, Cell)> = vec![
        ("reps".into(), Box::new(|s| s.reps.to_string())),
        ("mean".into(), Box::new(|s| s.mean.to_string())),
        ("bias".into(), Box::new(|s| s.bias.to_string())),
        ("variance".into(), Box::new(|s| s.variance.to_string())),
        ("mse".into(), Box::new(|s| s.mse.to_string())),
        ("bias_se".into(), Box::new(|s| s.bias_se.to_string())),
        ("variance_se".into(), Box::new(|s| s.variance_se.to_string())),
        ("mse_se".into(), Box::new(|s| s.mse_se.to_string())),
        ("mean_variance_hat".into(), Box::new(|s| opt(s.mean_variance_hat))),
        ("relative_bias".into(), Box::new(|s| opt(s.relative_bias))),
        ("relative_bias_se".into(), Box::new(|s| opt(s.relative_bias_se))),
    ];
    for (k, &level) in report.levels.iter().enumerate() {
        rows.push((
            format!("coverage_{}", level_label(level)),
            Box::new(move |s| opt(s.coverage.get(k).map(|c| c.rate))),
        ));
    }
    rows.push(("mean_abs_oracle_diff".into(), Box::new(|s| s.mean_abs_oracle_diff.to_string())));
    rows.push(("out_of_range".into(), Box::new(|s| s.out_of_range.to_string())));
    rows
}

fn write_replicates(path: &Path, methods: &[Method], levels: &[f64], results: &[ReplicateResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["rep".to_string(), "oracle".into(), "complete_case".into()];
    for m in methods {
        for field in ["theta_hat", "variance_hat", "lambda", "tau"] {
            header.push(format!("{m}_{field}"));
        }
        for &l in levels {
            header.push(format!("{m}_covered_{}", level_label(l)));
        }
    }
    w.write_record(&header)?;
    for r in results {
        let mut row = vec![r.rep.to_string(), r.oracle.to_string(), r.complete_case.to_string()];
        for m in methods {
            let e = r.estimates.iter().find(|e| e.method == *m);
            row.push(e.map_or_else(String::new, |e| e.theta_hat.to_string()));
            row.push(opt(e.and_then(|e| e.variance_hat)));
            row.push(opt(e.and_then(|e| e.lambda)));
            row.push(opt(e.and_then(|e| e.tau)));
            for k in 0..levels.len() {
                row.push(e.and_then(|e| e.covered.get(k)).map_or_else(String::new, |&c| u8::from(c).to_string()));
            }
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(CliError::io(path))
}

pub fn simulate(job: &SimulateJob) -> Result<()> {
    let cfg = &job.config;
    let (report, results) = run_mc(cfg)?;
    let out = &job.run.output;
    prepare_dir(out)?;

    let path = out.join("table.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec!["statistic".to_string()];
    header.extend(report.methods.iter().map(|s| s.method.to_string()));
    w.write_record(&header)?;
    for (name, cell) in table_rows(&report) {
        let mut row = vec![name];
        row.extend(report.methods.iter().map(&cell));
        w.write_record(&row)?;
    }
    w.flush().map_err(CliError::io(&path))?;

    write_replicates(&out.join("replicates.csv"), &cfg.methods, &report.levels, &results)?;
    write_json(&out.join("report.json"), &report)?;
    for s in &report.methods {
        println!("{}: bias {} variance {} mse {}", s.method, s.bias, s.variance, s.mse);
    }
    if !report.failures.is_empty() {
        log::warn!("{} of {} replicates failed and were excluded", report.failures.len(), report.reps);
    }
    Ok(())
}

#[derive(Serialize)]
struct RatioOutput<'a> {
    input: &'a Path,
    delta: &'a str,
    covariates: Vec<&'a str>,
    kernel: Option<String>,
    n: usize,
    n1: usize,
    n0: usize,
    tau: Option<f64>,
    tau_grid: Vec<f64>,
    cv_scores: Vec<f64>,
    max_omega: f64,
    warnings: Vec<String>,
}

pub fn ratio(job: &RatioJob) -> Result<()> {
    let table = Table::read(&job.input)?;
    let dcol = table.column(&job.delta)?;
    let cols = table.covariate_columns(job.covariates.as_deref(), dcol)?;
    let x = table.covariates(&cols)?;
    let delta = table.indicator(dcol)?;
    let n1 = delta.iter().filter(|&&d| d).count();
    if n1 == 0 {
        return Err(CliError::AllMissing);
    }
    let n = delta.len();
    let config = &job.run.imputation;
    let mut warnings = Vec::new();
    let (mut kernel, mut tau, mut tau_grid, mut cv_scores) = (None, None, Vec::new(), Vec::new());

    let omega = if n1 == n {
        warnings.push("no missing rows; weights are identically 1".to_string());
        Array1::ones(n)
    } else {
        let sample = LabeledSample::new(x, Array1::zeros(n), delta.clone())?;
        let scaler = InputScaler::fit(sample.x())?;
        let responders = sample.responder_indices();
        let spec = config.kernel.resolve(&scaler, sample.x().select(Axis(0), &responders).view())?;
        kernel = Some(spec.summary());
        let k = gram_symmetric(&spec, &scaler, sample.x())?;
        let options = RatioOptions::default();
        let t = match config.tau {
            Some(t) => t,
            None => {
                let grid = config.tau_grid.clone().unwrap_or_else(default_tau_grid);
                let sel = cv_select_tau_on_gram(k.view(), &delta, &grid, config.folds, config.seed, &options)?;
                tau_grid = grid;
                cv_scores = sel.scores;
                sel.tau
            }
        };
        let model = fit_ratio_on_gram(&sample, &spec, &scaler, k.view(), t, &options)?;
        if model.exponent_clamped() {
            warnings.push(format!("density-ratio exponent reached the clamp at tau = {t}"));
        }
        tau = Some(t);
        model.omega_from_gram(k.view())?
    };
    let max_omega = omega.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max_omega > 1.0 / config.c_min {
        warnings.push(format!("max weight {max_omega} exceeds 1/c_min = {}", 1.0 / config.c_min));
    }
    for w in &warnings {
        log::warn!("{w}");
    }

    let out = &job.run.output;
    prepare_dir(out)?;
    write_weights(&out.join("weights.csv"), &delta, &omega)?;
    let path = out.join("table.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["tau", "cv_score"])?;
    for (t, s) in tau_grid.iter().zip(&cv_scores) {
        w.write_record([t.to_string(), s.to_string()])?;
    }
    w.flush().map_err(CliError::io(&path))?;
    println!("tau {}, max omega {max_omega}; n = {n}, missing = {}", opt(tau), n - n1);
    let output = RatioOutput {
        input: &job.input,
        delta: &job.delta,
        covariates: cols.iter().map(|&c| &table.headers[c]).collect(),
        kernel,
        n,
        n1,
        n0: n - n1,
        tau,
        tau_grid,
        cv_scores,
        max_omega,
        warnings,
    };
    write_json(&out.join("report.json"), &output)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_labels() {
        assert_eq!(level_label(0.9), "90");
        assert_eq!(level_label(0.95), "95");
        assert_eq!(level_label(0.975), "97.5");
    }

    #[test]
    fn complete_case_standard_error() {
        let cc = complete_case(&Array1::from(vec![1.0, 3.0, f64::NAN]), &[true, true, false], &[0.95]).unwrap();
        assert_eq!(cc.estimate, 2.0);
        // s² = 2, n₁ = 2
        assert!((cc.std_error.unwrap() - 1.0).abs() < 1e-15);
    }
}
