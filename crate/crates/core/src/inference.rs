//! The end-to-end estimator: KRR imputation with GCV-selected `λ`, a
//! density-ratio fit with CV-selected `τ`, and the linearization variance.
//!
//! With `ηᵢ = m̂(xᵢ) + δᵢ ω̂(xᵢ) {yᵢ − m̂(xᵢ)}`,
//! `V̂ = {n(n − 1)}⁻¹ Σ (ηᵢ − η̄)²` and the interval is `θ̂ ∓ z √V̂`.

use ndarray::{Array1, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::density_ratio::{cv_select_tau_on_gram, default_tau_grid, fit_ratio_on_gram, RatioOptions, DEFAULT_FOLDS};
use crate::error::{Error, Result};
use crate::kernels::{gram_symmetric, InputScaler, KernelChoice};
use crate::krr::{default_lambda_grid, select_lambda_on_path, GcvPath, GcvVariant, KrrModel};
use crate::numerics::{norm_quantile, solve_spd};
use crate::sample::{imputed_mean, LabeledSample};
use crate::Real;

/// `ηᵢ = m̂ᵢ + δᵢ ω̂ᵢ (yᵢ − m̂ᵢ)`; `y` is ignored where `δᵢ = 0`.
pub fn influence_values<T: Real>(
    m_hat: ArrayView1<'_, T>,
    y: ArrayView1<'_, T>,
    delta: &[bool],
    omega: ArrayView1<'_, T>,
) -> Result<Array1<T>> {
    let n = delta.len();
    for len in [m_hat.len(), y.len(), omega.len()] {
        if len != n {
            return Err(Error::DimensionMismatch { expected: n, found: len });
        }
    }
    Ok(Array1::from_shape_fn(n, |i| if delta[i] { m_hat[i] + omega[i] * (y[i] - m_hat[i]) } else { m_hat[i] }))
}

/// `{n(n − 1)}⁻¹ Σ (ηᵢ − η̄)²`.
pub fn variance_estimate<T: Real>(eta: ArrayView1<'_, T>) -> Result<T> {
    let n = eta.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!("variance needs at least 2 values, got {n}")));
    }
    let nf = T::from_usize_lossy(n);
    let mean = eta.sum() / nf;
    let ss: T = eta.iter().map(|v| (*v - mean) * (*v - mean)).sum();
    Ok(ss / (nf * (nf - T::one())))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval<T> {
    pub level: T,
    pub lower: T,
    pub upper: T,
}

impl<T: Real> ConfidenceInterval<T> {
    pub fn contains(&self, value: T) -> bool {
        self.lower <= value && value <= self.upper
    }
}

/// Two-sided normal interval `θ̂ ∓ z_{(1+level)/2} √V̂`.
pub fn confidence_interval<T: Real>(theta_hat: T, variance: T, level: T) -> Result<ConfidenceInterval<T>> {
    if !(level > T::zero() && level < T::one()) {
        return Err(Error::InvalidInput(format!("confidence level {level} outside (0, 1)")));
    }
    if !(variance >= T::zero()) {
        return Err(Error::InvalidInput(format!("variance must be non-negative, got {variance}")));
    }
    let z = norm_quantile((T::one() + level) / T::lit(2.0))?;
    let half = z * variance.sqrt();
    Ok(ConfidenceInterval { level, lower: theta_hat - half, upper: theta_hat + half })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImputationConfig<T> {
    pub kernel: KernelChoice<T>,
    /// Fixed `λ`; `None` selects it by GCV over `lambda_grid`.
    pub lambda: Option<T>,
    /// `None` uses [`default_lambda_grid`].
    pub lambda_grid: Option<Vec<T>>,
    pub gcv: GcvVariant,
    /// Fit KRR to responses centered at the responder mean and add the mean
    /// back to predictions. When false the fit is intercept-free.
    pub center_response: bool,
    /// Fixed `τ`; `None` selects it by cross-validation over `tau_grid`.
    pub tau: Option<T>,
    pub tau_grid: Option<Vec<T>>,
    pub folds: usize,
    pub seed: u64,
    pub levels: Vec<T>,
    /// Lower bound on the response probability used for the weight warning.
    pub c_min: T,
    /// Skip the density-ratio fit and variance when false.
    pub compute_variance: bool,
}

impl<T: Real> Default for ImputationConfig<T> {
    fn default() -> Self {
        Self {
            kernel: KernelChoice::default(),
            lambda: None,
            lambda_grid: None,
            gcv: GcvVariant::default(),
            center_response: true,
            tau: None,
            tau_grid: None,
            folds: DEFAULT_FOLDS,
            seed: 0,
            levels: vec![T::lit(0.9), T::lit(0.95)],
            c_min: T::lit(0.01),
            compute_variance: true,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ImputationReport<T> {
    pub theta_hat: T,
    pub complete_case_mean: T,
    /// `None` when the variance step was skipped.
    pub variance_hat: Option<T>,
    pub std_error: Option<T>,
    pub intervals: Vec<ConfidenceInterval<T>>,
    pub kernel: String,
    pub gcv: GcvVariant,
    pub lambda: T,
    /// Constant added to the kernel expansion (the responder mean when centering).
    pub response_offset: T,
    pub tau: Option<T>,
    pub n: usize,
    pub n1: usize,
    pub n0: usize,
    pub max_omega: Option<T>,
    pub warnings: Vec<String>,
    pub lambda_grid: Vec<T>,
    pub gcv_scores: Vec<T>,
    pub tau_grid: Vec<T>,
    pub cv_scores: Vec<T>,
    /// `m̂(xᵢ)` for every unit.
    #[serde(skip)]
    pub m_hat: Array1<T>,
    /// `ω̂(xᵢ)`, present with the variance.
    #[serde(skip)]
    pub omega: Option<Array1<T>>,
    /// `p̂(xᵢ) = 1 / ω̂(xᵢ)`.
    #[serde(skip)]
    pub p_hat: Option<Array1<T>>,
    #[serde(skip)]
    pub eta: Option<Array1<T>>,
}

fn to_grid<T: Real>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::lit(x)).collect()
}

/// Runs the full estimator on `sample`.
pub fn estimate<T: Real>(sample: &LabeledSample<T>, config: &ImputationConfig<T>) -> Result<ImputationReport<T>> {
    for &level in &config.levels {
        if !(level > T::zero() && level < T::one()) {
            return Err(Error::InvalidInput(format!("confidence level {level} outside (0, 1)")));
        }
    }
    let mut warnings = Vec::new();
    let scaler = InputScaler::fit(sample.x())?;
    let responders = sample.responder_indices();
    let spec = config.kernel.resolve(&scaler, sample.responder_x().view())?;

    let need_full = config.compute_variance && sample.n0() > 0;
    let (k_full, k_rr) = if need_full {
        let k = gram_symmetric(&spec, &scaler, sample.x())?;
        let k_rr = k.select(Axis(0), &responders).select(Axis(1), &responders);
        (Some(k), k_rr)
    } else {
        (None, gram_symmetric(&spec, &scaler, sample.responder_x().view())?)
    };
    let offset =
        if config.center_response { sample.responder_y().sum() / T::from_usize_lossy(sample.n1()) } else { T::zero() };
    let y_r = sample.responder_y().mapv(|v| v - offset);

    let (lambda, lambda_grid, gcv_scores) = match config.lambda {
        Some(l) => (l, Vec::new(), Vec::new()),
        None => {
            let grid =
                config.lambda_grid.clone().unwrap_or_else(|| to_grid(&default_lambda_grid(sample.n(), spec.order())));
            let path = GcvPath::new(k_rr.view(), y_r.as_slice().expect("contiguous"), sample.n())?;
            let sel = select_lambda_on_path(&path, &grid, config.gcv)?;
            if sel.lambda == grid.iter().copied().fold(T::infinity(), T::min)
                || sel.lambda == grid.iter().copied().fold(T::neg_infinity(), T::max)
            {
                warnings.push(format!("GCV selected lambda = {} at the edge of the grid", sel.lambda));
            }
            (sel.lambda, grid, sel.scores)
        }
    };
    let coefficients = solve_spd(k_rr.view(), y_r.view(), lambda)?.solution;

    let m_hat = match &k_full {
        Some(k) => k.select(Axis(1), &responders).dot(&coefficients).mapv(|v| v + offset),
        None => {
            let model = KrrModel::from_parts(spec, scaler.clone(), sample.responder_x(), coefficients, lambda)?
                .with_offset(offset);
            crate::krr::predict(&model, sample.x())?
        }
    };
    let missing = sample.missing_indices();
    let theta_hat = imputed_mean(sample, &missing, m_hat.select(Axis(0), &missing).view());

    let mut report = ImputationReport {
        theta_hat,
        complete_case_mean: sample.complete_case_mean(),
        variance_hat: None,
        gcv: config.gcv,
        std_error: None,
        intervals: Vec::new(),
        kernel: spec.summary(),
        lambda,
        response_offset: offset,
        tau: None,
        n: sample.n(),
        n1: sample.n1(),
        n0: sample.n0(),
        max_omega: None,
        warnings,
        lambda_grid,
        gcv_scores,
        tau_grid: Vec::new(),
        cv_scores: Vec::new(),
        m_hat,
        omega: None,
        p_hat: None,
        eta: None,
    };
    if !config.compute_variance {
        return Ok(report);
    }

    let omega = match &k_full {
        None => {
            report.warnings.push("no missing responses; weights are identically 1".into());
            Array1::ones(sample.n())
        }
        Some(k) => {
            let options = RatioOptions::default();
            let tau = match config.tau {
                Some(t) => t,
                None => {
                    let grid = config.tau_grid.clone().unwrap_or_else(|| to_grid(&default_tau_grid()));
                    let sel =
                        cv_select_tau_on_gram(k.view(), sample.delta(), &grid, config.folds, config.seed, &options)?;
                    report.tau_grid = grid;
                    report.cv_scores = sel.scores;
                    sel.tau
                }
            };
            let model = fit_ratio_on_gram(sample, &spec, &scaler, k.view(), tau, &options)?;
            if model.exponent_clamped() {
                report.warnings.push(format!("density-ratio exponent reached the clamp at tau = {tau}"));
            }
            report.tau = Some(tau);
            model.omega_from_gram(k.view())?
        }
    };
    let max_omega = omega.iter().copied().fold(T::neg_infinity(), T::max);
    if max_omega > T::one() / config.c_min {
        let msg = format!("max weight {max_omega} exceeds 1/c_min = {}", T::one() / config.c_min);
        log::warn!("{msg}");
        report.warnings.push(msg);
    }
    let eta = influence_values(report.m_hat.view(), sample.y(), sample.delta(), omega.view())?;
    let variance = variance_estimate(eta.view())?;
    report.intervals =
        config.levels.iter().map(|&level| confidence_interval(theta_hat, variance, level)).collect::<Result<_>>()?;
    report.variance_hat = Some(variance);
    report.std_error = Some(variance.sqrt());
    report.max_omega = Some(max_omega);
    report.p_hat = Some(omega.mapv(|w| T::one() / w));
    report.omega = Some(omega);
    report.eta = Some(eta);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn influence_hand_case() {
        let eta = influence_values(
            array![1.0, 2.0, 3.0].view(),
            array![2.0, f64::NAN, 5.0].view(),
            &[true, false, true],
            array![2.0, 9.0, 1.5].view(),
        )
        .unwrap();
        assert_eq!(eta, array![3.0, 2.0, 6.0]);
    }

    #[test]
    fn variance_hand_case() {
        // deviations −1, 0, 1: Σ = 2, n(n−1) = 6
        let v: f64 = variance_estimate(array![1.0, 2.0, 3.0].view()).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(variance_estimate(array![4.0, 4.0].view()).unwrap(), 0.0);
        assert!(variance_estimate(array![4.0].view()).is_err());
    }

    #[test]
    fn interval_is_symmetric() {
        let ci = confidence_interval(1.0f64, 0.04, 0.95).unwrap();
        assert!((ci.upper - 1.0 - 1.959_963_984_540_054 * 0.2).abs() < 1e-9);
        assert!((ci.upper + ci.lower - 2.0).abs() < 1e-15);
        assert!(confidence_interval(1.0, 0.04, 1.0).is_err());
        let wider = confidence_interval(1.0, 0.04, 0.99).unwrap();
        assert!(wider.lower < ci.lower);
    }

    fn sample(n: usize, seed: u64) -> LabeledSample<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, 2), |_| rng.random_range(0.0..1.0));
        let y =
            Array1::from_shape_fn(n, |i| 1.0 + x[[i, 0]] + x[[i, 1]] * x[[i, 1]] + 0.1 * rng.random_range(-1.0..1.0));
        let delta: Vec<bool> = (0..n).map(|i| rng.random_bool(0.9 - 0.5 * x[[i, 0]])).collect();
        LabeledSample::new(x, y, delta).unwrap()
    }

    #[test]
    fn pipeline_runs() {
        let s = sample(80, 1);
        let r = estimate(&s, &ImputationConfig::default()).unwrap();
        assert!(r.theta_hat.is_finite());
        assert!((r.theta_hat - 1.5 - 1.0 / 3.0).abs() < 0.2, "{}", r.theta_hat);
        let se = r.std_error.unwrap();
        assert!(se > 0.0 && se < 0.2);
        assert_eq!(r.intervals.len(), 2);
        assert!(r.intervals[0].upper - r.intervals[0].lower < r.intervals[1].upper - r.intervals[1].lower);
        assert!(r.omega.unwrap().iter().all(|w| *w >= 1.0));
        assert!(r.tau.is_some());
    }

    #[test]
    fn pipeline_matches_direct_fit() {
        let s = sample(40, 2);
        let spec = crate::KernelSpec::sobolev(2).unwrap();
        for center in [true, false] {
            for compute_variance in [true, false] {
                let cfg = ImputationConfig {
                    lambda: Some(0.01),
                    center_response: center,
                    compute_variance,
                    ..Default::default()
                };
                let r = estimate(&s, &cfg).unwrap();
                let m =
                    if center { crate::krr::fit_centered(&s, &spec, 0.01) } else { crate::krr::fit(&s, &spec, 0.01) }
                        .unwrap();
                let direct = crate::krr::impute_estimate(&s, &m).unwrap();
                assert!((r.theta_hat - direct).abs() < 1e-12);
                assert_eq!(r.response_offset, m.offset());
                assert_eq!(r.variance_hat.is_some(), compute_variance);
            }
        }
    }

    #[test]
    fn full_response_uses_unit_weights() {
        let mut s = sample(30, 3);
        s = LabeledSample::new(s.x().to_owned(), s.y().to_owned(), vec![true; 30]).unwrap();
        let r = estimate(&s, &ImputationConfig::default()).unwrap();
        assert!((r.theta_hat - s.complete_case_mean()).abs() < 1e-12);
        assert!(r.omega.unwrap().iter().all(|w| *w == 1.0));
        let naive = variance_estimate(s.y()).unwrap();
        let v = r.variance_hat.unwrap();
        assert!(v.is_finite() && v <= naive * 1.0001, "{v} vs {naive}");
    }
}
