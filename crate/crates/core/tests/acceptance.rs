//! Monte Carlo acceptance run. One `[PASS]`/`[FAIL]` line per criterion;
//! exits nonzero if any criterion fails.

mod common;

use std::time::Instant;

use krr_impute::simulation::{aggregate, run_mc, Method, MethodSummary, Model, ReplicateResult, SimConfig, SimReport};

const SEED: u64 = 20_240_611;
const SUBSET: usize = 300;

struct Run {
    report: SimReport,
    results: Vec<ReplicateResult>,
    secs: f64,
}

impl Run {
    fn method(&self, m: Method) -> &MethodSummary {
        self.report.methods.iter().find(|s| s.method == m).expect("method present")
    }

    fn subset(&self, m: Method, reps: usize) -> MethodSummary {
        let head: Vec<ReplicateResult> = self.results.iter().filter(|r| r.rep < reps).cloned().collect();
        aggregate(self.report.theta, &self.report.levels, &[m], &head).remove(0)
    }
}

fn run(model: Model, n: usize, reps: usize, methods: &[Method], variance: bool) -> Run {
    let mut cfg = SimConfig::new(model, n, reps, SEED);
    cfg.methods = methods.to_vec();
    cfg.imputation.compute_variance = variance;
    let start = Instant::now();
    let (report, results) = run_mc(&cfg).unwrap_or_else(|e| panic!("model {model} n={n}: {e}"));
    let secs = start.elapsed().as_secs_f64();
    eprintln!("  model {model} n={n} reps={reps}: {secs:.1}s, {} failed", report.failures.len());
    Run { report, results, secs }
}

struct Ledger {
    failed: usize,
}

impl Ledger {
    fn line(&mut self, passed: bool, label: &str, detail: String) {
        if !passed {
            self.failed += 1;
        }
        println!("[{}] {label}: {detail}", if passed { "PASS" } else { "FAIL" });
    }
}

fn main() {
    let total = Instant::now();
    let cores = std::thread::available_parallelism().map_or(1, |c| c.get());
    eprintln!("acceptance run on {cores} thread(s)");
    let all = Method::ALL;
    let mut out = Ledger { failed: 0 };

    let suite_start = Instant::now();
    let checks = common::property_suite();
    let suite_secs = suite_start.elapsed().as_secs_f64();

    let a500 = run(Model::A, 500, 500, &all, true);
    let b500 = run(Model::B, 500, 500, &all, true);
    let c500 = run(Model::C, 500, SUBSET, &all, false);
    let binary: Vec<Run> =
        [Model::D, Model::E, Model::F].into_iter().map(|m| run(m, 500, SUBSET, &all, false)).collect();
    let a1000 = run(Model::A, 1000, 500, &[Method::Krr], false);
    let a200 = run(Model::A, 200, 500, &[Method::Krr], false);

    // 1. variance estimator calibration
    for r in [&a500, &b500] {
        let s = r.method(Method::Krr);
        let rb = s.relative_bias.unwrap_or(f64::NAN);
        out.line(
            rb.abs() <= 0.15,
            &format!("1 relative bias of variance estimator, model {}", r.report.model),
            format!(
                "R.B. {rb:+.4} (MC se {:.4}), mean V {:.5}, MC Var {:.5}, tol |R.B.| <= 0.15",
                s.relative_bias_se.unwrap_or(f64::NAN),
                s.mean_variance_hat.unwrap_or(f64::NAN),
                s.variance
            ),
        );
    }
    let variance_secs = a500.secs + b500.secs;
    let projected = variance_secs * cores as f64 / 8.0 / 60.0;
    out.line(
        projected <= 20.0,
        "1 runtime of the two 500-rep variance runs, projected to 8 cores",
        format!("{:.1} min on {cores} thread(s), {projected:.1} min projected, tol 20 min", variance_secs / 60.0),
    );

    // 2. coverage
    let cov = &a500.method(Method::Krr).coverage;
    for (level, lo, hi) in [(0.90, 0.865, 0.93), (0.95, 0.92, 0.97)] {
        let c = cov.iter().find(|c| (c.level - level).abs() < 1e-12).expect("level present");
        out.line(
            (lo..=hi).contains(&c.rate),
            &format!("2 coverage of {:.0}% interval, model A", level * 100.0),
            format!(
                "{:.1}% (MC se {:.1}%), band [{:.1}%, {:.1}%]",
                c.rate * 100.0,
                c.mc_se * 100.0,
                lo * 100.0,
                hi * 100.0
            ),
        );
    }

    // 3. method ordering on the first 300 replicates
    for r in [&b500, &c500] {
        let [k, s, l] = all.map(|m| r.subset(m, SUBSET).mse);
        out.line(
            k < s && k < l,
            &format!("3 KRR has smallest MSE, model {}", r.report.model),
            format!("MSE KRR {k:.5}, BSpline {s:.5}, Linear {l:.5}"),
        );
    }
    let mses = all.map(|m| a500.subset(m, SUBSET).mse);
    let (lo, hi) = mses.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
    out.line(
        hi <= 1.15 * lo,
        "3 MSEs within 15% of each other, model A",
        format!("MSE KRR {:.5}, BSpline {:.5}, Linear {:.5}, max/min {:.3}", mses[0], mses[1], mses[2], hi / lo),
    );

    // 4. magnitude at n = 1000
    let v = a1000.subset(Method::Krr, SUBSET).variance;
    out.line(
        (0.75 * 0.0132..=1.25 * 0.0132).contains(&v),
        "4 KRR variance at n=1000, model A, 300 reps",
        format!("{v:.5}, band [{:.5}, {:.5}]", 0.75 * 0.0132, 1.25 * 0.0132),
    );

    // 5. binary responses
    for r in &binary {
        for m in all {
            let s = r.method(m);
            let band = 3.0 * (s.bias_se.powi(2) + r.report.theta_se.powi(2)).sqrt();
            out.line(
                s.bias.abs() <= band,
                &format!("5 bias within 3 MC se, model {}, {}", r.report.model, m.name()),
                format!("bias {:+.5}, 3 se {band:.5}", s.bias),
            );
        }
    }

    // 6. root-n signature
    let ratio = a1000.method(Method::Krr).variance / a500.method(Method::Krr).variance;
    out.line(
        (0.3..=0.7).contains(&ratio),
        "6 Var(n=1000)/Var(n=500), model A KRR",
        format!("{ratio:.4}, band [0.3, 0.7]"),
    );
    let scaled = |r: &Run| (r.report.n as f64).sqrt() * r.method(Method::Krr).mean_abs_oracle_diff;
    let (s200, s500, s1000) = (scaled(&a200), scaled(&a500), scaled(&a1000));
    out.line(
        s1000 < s200,
        "6 sqrt(n) mean |estimate - oracle| decreasing from n=200 to n=1000",
        format!(
            "n=200 {s200:.4}, n=500 {s500:.4}, n=1000 {s1000:.4} ({}monotone)",
            if s200 > s500 && s500 > s1000 { "" } else { "not " }
        ),
    );

    // 7. property suite
    for c in &checks {
        out.line(c.passed, &format!("7 {}", c.name), c.detail.clone());
    }
    out.line(suite_secs < 120.0, "7 property suite runtime", format!("{suite_secs:.1}s, tol 120s"));

    if let Some(dir) = option_env!("CARGO_TARGET_TMPDIR") {
        let reports: Vec<&SimReport> =
            [&a500, &b500, &c500, &a1000, &a200].into_iter().chain(&binary).map(|r| &r.report).collect();
        let path = std::path::Path::new(dir).join("acceptance.json");
        if let Ok(json) = serde_json::to_string_pretty(&reports) {
            let _ = std::fs::write(&path, json);
            eprintln!("summaries written to {}", path.display());
        }
    }

    println!("total elapsed {:.1} min, {} failed criteria", total.elapsed().as_secs_f64() / 60.0, out.failed);
    if out.failed > 0 {
        std::process::exit(1);
    }
}
