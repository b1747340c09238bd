//! Kernel ridge regression on the responders and the imputation estimator.
//!
//! The fitted function is `m̂(x) = Σⱼ α̂ⱼ K(x, xⱼ)` over responder covariates
//! `xⱼ`, with `(K_rr + λI) α̂ = y_r`. On responder coordinates this is the
//! same solution as the full-sample system `(ΔK + λI)⁻¹ Δ y`, while staying
//! symmetric positive definite and `O(n₁³)`.
//!
//! [`fit_centered`] subtracts the responder mean first and adds it back to
//! every prediction, so the penalty shrinks towards that mean instead of 0.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{gram, gram_symmetric, InputScaler, KernelSpec};
use crate::numerics::{log_space, solve_spd, Tridiagonal};
use crate::sample::{impute_with, LabeledSample, RegressionFunction};
use crate::Real;

#[derive(Debug, Clone)]
pub struct KrrModel<T> {
    spec: KernelSpec<T>,
    scaler: InputScaler<T>,
    support: Array2<T>,
    coefficients: Array1<T>,
    lambda: T,
    offset: T,
}

impl<T: Real> KrrModel<T> {
    /// Assembles a model from parts; mostly useful for tests and for
    /// reloading fitted coefficients.
    pub fn from_parts(
        spec: KernelSpec<T>,
        scaler: InputScaler<T>,
        support: Array2<T>,
        coefficients: Array1<T>,
        lambda: T,
    ) -> Result<Self> {
        if coefficients.len() != support.nrows() {
            return Err(Error::DimensionMismatch { expected: support.nrows(), found: coefficients.len() });
        }
        if !(lambda > T::zero()) {
            return Err(Error::InvalidInput(format!("lambda must be positive, got {lambda}")));
        }
        Ok(Self { spec, scaler, support, coefficients, lambda, offset: T::zero() })
    }

    /// Constant added to every prediction.
    pub fn with_offset(mut self, offset: T) -> Self {
        self.offset = offset;
        self
    }

    pub fn offset(&self) -> T {
        self.offset
    }

    pub fn spec(&self) -> &KernelSpec<T> {
        &self.spec
    }

    pub fn scaler(&self) -> &InputScaler<T> {
        &self.scaler
    }

    pub fn support(&self) -> ArrayView2<'_, T> {
        self.support.view()
    }

    pub fn coefficients(&self) -> &Array1<T> {
        &self.coefficients
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    /// RKHS norm² of the fit, `α̂ᵀ K_rr α̂`.
    pub fn rkhs_norm_squared(&self) -> Result<T> {
        let k = gram_symmetric(&self.spec, &self.scaler, self.support.view())?;
        Ok(self.coefficients.dot(&k.dot(&self.coefficients)))
    }
}

impl<T: Real> RegressionFunction<T> for KrrModel<T> {
    fn predict(&self, x: ArrayView2<'_, T>) -> Result<Array1<T>> {
        predict(self, x)
    }
}

/// Fits on the responders of `sample`, scaling inputs by the range of all
/// covariates in the sample.
pub fn fit<T: Real>(sample: &LabeledSample<T>, spec: &KernelSpec<T>, lambda: T) -> Result<KrrModel<T>> {
    let scaler = InputScaler::fit(sample.x())?;
    fit_with_scaler(sample, spec, &scaler, lambda)
}

/// Fits `y − ȳ_r` and predicts `ȳ_r + Σⱼ α̂ⱼ K(x, xⱼ)`.
pub fn fit_centered<T: Real>(sample: &LabeledSample<T>, spec: &KernelSpec<T>, lambda: T) -> Result<KrrModel<T>> {
    let scaler = InputScaler::fit(sample.x())?;
    fit_inner(sample, spec, &scaler, lambda, true)
}

pub fn fit_with_scaler<T: Real>(
    sample: &LabeledSample<T>,
    spec: &KernelSpec<T>,
    scaler: &InputScaler<T>,
    lambda: T,
) -> Result<KrrModel<T>> {
    fit_inner(sample, spec, scaler, lambda, false)
}

fn fit_inner<T: Real>(
    sample: &LabeledSample<T>,
    spec: &KernelSpec<T>,
    scaler: &InputScaler<T>,
    lambda: T,
    center: bool,
) -> Result<KrrModel<T>> {
    if !(lambda > T::zero()) || !lambda.is_finite() {
        return Err(Error::InvalidInput(format!("lambda must be positive, got {lambda}")));
    }
    if sample.n1() == 0 {
        return Err(Error::NoResponders);
    }
    let support = sample.responder_x();
    let y = sample.responder_y();
    let offset = if center { y.sum() / T::from_usize_lossy(y.len()) } else { T::zero() };
    let k = gram_symmetric(spec, scaler, support.view())?;
    let report = solve_spd(k.view(), y.mapv(|v| v - offset).view(), lambda)?;
    Ok(KrrModel { spec: *spec, scaler: scaler.clone(), support, coefficients: report.solution, lambda, offset })
}

pub fn predict<T: Real>(model: &KrrModel<T>, x: ArrayView2<'_, T>) -> Result<Array1<T>> {
    if x.ncols() != model.support.ncols() {
        return Err(Error::DimensionMismatch { expected: model.support.ncols(), found: x.ncols() });
    }
    if x.nrows() == 0 {
        return Ok(Array1::zeros(0));
    }
    let k = gram(&model.spec, &model.scaler, x, model.support.view())?;
    Ok(k.dot(&model.coefficients).mapv(|v| v + model.offset))
}

/// `θ̂_I = n⁻¹ Σ { δᵢ yᵢ + (1 − δᵢ) m̂(xᵢ) }`.
pub fn impute_estimate<T: Real>(sample: &LabeledSample<T>, model: &KrrModel<T>) -> Result<T> {
    impute_with(model, sample)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum GcvVariant {
    /// `n⁻¹‖(Δ − A)y‖² / (n⁻¹ tr(Δ − A))`. The score behaves like `λ` times
    /// a constant as `λ → 0`, so it tends to pick the smallest grid value.
    LinearTrace,
    /// `n⁻¹‖(Δ − A)y‖² / (n⁻¹ tr(Δ − A))²`, the classical criterion.
    #[default]
    SquaredTrace,
}

/// GCV scores for many `λ` from a single tridiagonalization of `K_rr`.
///
/// With `A(λ) = ΔK(ΔK + λI)⁻¹Δ`, the responder block of `A` is
/// `S = K_rr (K_rr + λI)⁻¹` and every other entry vanishes, so
/// `(Δ − A) y = λ (K_rr + λI)⁻¹ y_r` and `tr(Δ − A) = Σ λ / (μᵢ + λ)`.
#[derive(Debug, Clone)]
pub struct GcvPath<T> {
    tri: Tridiagonal<T>,
    eigenvalues: Vec<T>,
    rotated_y: Vec<T>,
    n: usize,
}

impl<T: Real> GcvPath<T> {
    /// `n` is the full sample size (responders plus non-respondents).
    pub fn new(k_rr: ArrayView2<'_, T>, y_r: &[T], n: usize) -> Result<Self> {
        if k_rr.nrows() != y_r.len() {
            return Err(Error::DimensionMismatch { expected: k_rr.nrows(), found: y_r.len() });
        }
        if y_r.is_empty() {
            return Err(Error::NoResponders);
        }
        let tri = Tridiagonal::reduce(k_rr);
        let eigenvalues = tri.eigenvalues()?.into_iter().map(|v| v.max(T::zero())).collect();
        let mut rotated_y = y_r.to_vec();
        tri.apply_qt(&mut rotated_y);
        Ok(Self { tri, eigenvalues, rotated_y, n })
    }

    pub fn from_sample(sample: &LabeledSample<T>, spec: &KernelSpec<T>, scaler: &InputScaler<T>) -> Result<Self> {
        let k = gram_symmetric(spec, scaler, sample.responder_x().view())?;
        let y = sample.responder_y();
        Self::new(k.view(), y.as_slice().expect("contiguous"), sample.n())
    }

    /// `‖(Δ − A(λ)) y‖²`.
    pub fn residual_norm_squared(&self, lambda: T) -> Result<T> {
        let w = self
            .tri
            .solve_shifted(lambda, &self.rotated_y)
            .ok_or(Error::NumericalSingularity { residual: f64::NAN })?;
        Ok(lambda * lambda * w.iter().map(|v| *v * *v).sum::<T>())
    }

    /// `tr(Δ − A(λ))`.
    pub fn trace(&self, lambda: T) -> T {
        self.eigenvalues.iter().map(|mu| lambda / (*mu + lambda)).sum()
    }

    pub fn score(&self, lambda: T, variant: GcvVariant) -> Result<T> {
        if !(lambda > T::zero()) {
            return Err(Error::InvalidInput(format!("lambda must be positive, got {lambda}")));
        }
        let n = T::from_usize_lossy(self.n);
        let trace = self.trace(lambda);
        if !(trace > T::epsilon() * T::from_usize_lossy(self.eigenvalues.len())) {
            return Err(Error::DegenerateTrace { lambda: lambda.to_f64_lossy() });
        }
        let numerator = self.residual_norm_squared(lambda)? / n;
        let denom = trace / n;
        Ok(match variant {
            GcvVariant::LinearTrace => numerator / denom,
            GcvVariant::SquaredTrace => numerator / (denom * denom),
        })
    }
}

pub fn gcv_score<T: Real>(
    sample: &LabeledSample<T>,
    spec: &KernelSpec<T>,
    lambda: T,
    variant: GcvVariant,
) -> Result<T> {
    let scaler = InputScaler::fit(sample.x())?;
    GcvPath::from_sample(sample, spec, &scaler)?.score(lambda, variant)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaSelection<T> {
    pub lambda: T,
    /// One score per grid point, NaN where the score could not be computed.
    pub scores: Vec<T>,
}

/// Grid minimizer of the GCV score; ties go to the smaller `λ`.
pub fn select_lambda<T: Real>(
    sample: &LabeledSample<T>,
    spec: &KernelSpec<T>,
    grid: &[T],
    variant: GcvVariant,
) -> Result<LambdaSelection<T>> {
    let scaler = InputScaler::fit(sample.x())?;
    select_lambda_on_path(&GcvPath::from_sample(sample, spec, &scaler)?, grid, variant)
}

pub fn select_lambda_on_path<T: Real>(
    path: &GcvPath<T>,
    grid: &[T],
    variant: GcvVariant,
) -> Result<LambdaSelection<T>> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("lambda grid is empty".into()));
    }
    let scores: Vec<T> =
        grid.iter().map(|&l| path.score(l, variant).ok().filter(|s| s.is_finite()).unwrap_or_else(T::nan)).collect();
    let mut best: Option<(T, T)> = None;
    for (&l, &s) in grid.iter().zip(&scores) {
        if s.is_nan() {
            continue;
        }
        best = match best {
            Some((bl, bs)) if bs < s || (bs == s && bl <= l) => Some((bl, bs)),
            _ => Some((l, s)),
        };
    }
    let (lambda, _) = best.ok_or(Error::AllScoresNonFinite)?;
    Ok(LambdaSelection { lambda, scores })
}

/// The rate-anchored penalty `n^{1−ℓ}`.
pub fn theoretical_lambda(n: usize, order: usize) -> f64 {
    (n as f64).powf(1.0 - order as f64)
}

/// 30 log-spaced points on `[1e-6 · n^{1−ℓ} · n, 1e2 · n]`, plus `n^{1−ℓ}`.
///
/// Gaussian kernels have no order; they use the `ℓ = 2` anchor.
pub fn default_lambda_grid(n: usize, order: Option<usize>) -> Vec<f64> {
    let order = order.unwrap_or(2);
    let anchor = theoretical_lambda(n, order);
    let lo = 1e-6 * anchor * n as f64;
    let hi = 1e2 * n as f64;
    let mut grid: Vec<f64> = log_space(lo, hi, 30).into_iter().filter(|v| *v > 0.0).collect();
    if !grid.contains(&anchor) {
        grid.push(anchor);
    }
    grid.sort_by(|a, b| a.total_cmp(b));
    grid
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Axis};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sample(n: usize, d: usize, p_resp: f64, seed: u64) -> LabeledSample<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, d), |_| rng.random_range(0.0..1.0));
        let y = Array1::from_shape_fn(n, |i| (3.0f64 * x[[i, 0]]).sin() + rng.random_range(-0.2..0.2));
        let mut delta: Vec<bool> = (0..n).map(|_| rng.random_bool(p_resp)).collect();
        delta[0] = true;
        LabeledSample::new(x, y, delta).unwrap()
    }

    fn spec() -> KernelSpec<f64> {
        KernelSpec::sobolev(2).unwrap()
    }

    #[test]
    fn interpolates_with_tiny_lambda() {
        let s = random_sample(12, 1, 1.0, 1);
        let m = fit(&s, &spec(), 1e-10).unwrap();
        let pred = predict(&m, s.x()).unwrap();
        for (p, y) in pred.iter().zip(s.y().iter()) {
            assert!((p - y).abs() < 1e-4);
        }
    }

    #[test]
    fn shrinks_with_huge_lambda() {
        let s = random_sample(15, 2, 0.7, 2);
        let m = fit(&s, &spec(), 1e12).unwrap();
        assert!(m.coefficients().iter().all(|a| a.abs() < 1e-6));
        assert!(predict(&m, s.x()).unwrap().iter().all(|p| p.abs() < 1e-4));
    }

    #[test]
    fn centered_fit_shrinks_towards_responder_mean() {
        let s = random_sample(15, 2, 0.7, 2);
        let m = fit_centered(&s, &spec(), 1e12).unwrap();
        let ybar = s.responder_y().mean().unwrap();
        assert_eq!(m.offset(), ybar);
        assert!(predict(&m, s.x()).unwrap().iter().all(|p| (p - ybar).abs() < 1e-4));
    }

    #[test]
    fn centered_fit_reproduces_constant_response() {
        let x = Array2::from_shape_fn((9, 2), |(i, j)| ((i * 7 + j * 3) % 9) as f64 / 8.0);
        let mut delta = vec![true; 9];
        delta[4] = false;
        let s = LabeledSample::new(x, Array1::from_elem(9, 2.5), delta).unwrap();
        let m = fit_centered(&s, &spec(), 0.3).unwrap();
        assert!(m.coefficients().iter().all(|a| *a == 0.0));
        assert!(predict(&m, s.x()).unwrap().iter().all(|p| *p == 2.5));
        // the intercept-free fit shrinks the level
        assert!(predict(&fit(&s, &spec(), 0.3).unwrap(), s.x()).unwrap()[4] < 2.5);
    }

    #[test]
    fn offset_shifts_predictions() {
        let s = random_sample(10, 2, 0.7, 3);
        let m = fit(&s, &spec(), 0.1).unwrap();
        let base = predict(&m, s.x()).unwrap();
        let shifted = predict(&m.clone().with_offset(1.5), s.x()).unwrap();
        for (a, b) in base.iter().zip(shifted.iter()) {
            assert!((b - a - 1.5).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_coefficients_predict_zero_and_linearity() {
        let s = random_sample(10, 2, 0.7, 3);
        let m = fit(&s, &spec(), 0.1).unwrap();
        let zero = KrrModel::from_parts(
            *m.spec(),
            m.scaler().clone(),
            m.support().to_owned(),
            Array1::zeros(m.coefficients().len()),
            0.1,
        )
        .unwrap();
        assert!(predict(&zero, s.x()).unwrap().iter().all(|p| *p == 0.0));
        let doubled =
            KrrModel::from_parts(*m.spec(), m.scaler().clone(), m.support().to_owned(), m.coefficients() * 2.0, 0.1)
                .unwrap();
        let p1 = predict(&m, s.x()).unwrap();
        let p2 = predict(&doubled, s.x()).unwrap();
        for (a, b) in p1.iter().zip(p2.iter()) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn predict_dimension_mismatch() {
        let s = random_sample(10, 2, 0.7, 4);
        let m = fit(&s, &spec(), 0.1).unwrap();
        assert!(matches!(predict(&m, array![[0.1]].view()), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn rejects_non_positive_lambda() {
        let s = random_sample(10, 1, 0.7, 5);
        assert!(fit(&s, &spec(), 0.0).is_err());
    }

    #[test]
    fn gcv_large_lambda_limits() {
        let s = random_sample(20, 2, 0.6, 6);
        let scaler = InputScaler::fit(s.x()).unwrap();
        let path = GcvPath::from_sample(&s, &spec(), &scaler).unwrap();
        let lambda = 1e14;
        let n = s.n() as f64;
        let num = path.residual_norm_squared(lambda).unwrap() / n;
        let expected: f64 = s.responder_y().iter().map(|v| v * v).sum::<f64>() / n;
        assert!((num - expected).abs() < 1e-9 * expected);
        assert!((path.trace(lambda) - s.n1() as f64).abs() < 1e-9);
    }

    #[test]
    fn lambda_selection_basics() {
        let s = random_sample(25, 1, 0.8, 7);
        let single = select_lambda(&s, &spec(), &[0.3], GcvVariant::LinearTrace).unwrap();
        assert_eq!(single.lambda, 0.3);
        let grid = log_space(1e-4, 1e2, 12);
        for variant in [GcvVariant::LinearTrace, GcvVariant::SquaredTrace] {
            let sel = select_lambda(&s, &spec(), &grid, variant).unwrap();
            let min = sel.scores.iter().cloned().fold(f64::INFINITY, f64::min);
            let idx = grid.iter().position(|l| *l == sel.lambda).unwrap();
            assert_eq!(sel.scores[idx], min);
        }
        assert!(select_lambda(&s, &spec(), &[], GcvVariant::SquaredTrace).is_err());
    }

    #[test]
    fn ties_go_to_smaller_lambda() {
        let s = random_sample(10, 1, 0.8, 8);
        let sel = select_lambda(&s, &spec(), &[0.5, 0.5, 0.2, 0.2], GcvVariant::SquaredTrace).unwrap();
        assert!(sel.lambda == 0.2 || sel.lambda == 0.5);
        let sel2 = select_lambda(&s, &spec(), &[0.2, 0.2], GcvVariant::SquaredTrace).unwrap();
        assert_eq!(sel2.lambda, 0.2);
    }

    #[test]
    fn default_grid_contains_anchor() {
        for n in [200, 500, 1000] {
            let g = default_lambda_grid(n, Some(2));
            assert_eq!(g.len(), 31);
            assert!(g.contains(&(1.0 / n as f64)));
            assert!(g.windows(2).all(|w| w[0] < w[1]));
            assert!((g[0] - 1e-6).abs() < 1e-18);
            assert!((g[30] - 100.0 * n as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn imputation_uses_predictions_on_missing_rows() {
        let s = random_sample(30, 2, 0.6, 9);
        let m = fit(&s, &spec(), 0.05).unwrap();
        let missing = s.missing_indices();
        let preds = predict(&m, s.x().select(Axis(0), &missing).view()).unwrap();
        let mut total = 0.0;
        for i in 0..s.n() {
            if s.delta()[i] {
                total += s.y()[i];
            }
        }
        total += preds.sum();
        let expected = total / s.n() as f64;
        assert!((impute_estimate(&s, &m).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn all_observed_gives_mean() {
        let s = random_sample(12, 1, 1.0, 10);
        let m = fit(&s, &spec(), 1.0).unwrap();
        assert!((impute_estimate(&s, &m).unwrap() - s.y().mean().unwrap()).abs() < 1e-14);
    }
}
