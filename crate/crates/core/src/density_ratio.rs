//! Penalized maximum-entropy estimation of the density ratio
//! `g(x) = f(x | δ = 0) / f(x | δ = 1)` in an RKHS.
//!
//! With `h = log g`, the fitted ratio is `ĝ(x) = exp{α₀ + Σⱼ αⱼ K(x, xⱼ)}` over
//! all sample points, minimizing
//!
//! `Σᵢ L(δᵢ, α₀ + Σⱼ αⱼ K(xᵢ, xⱼ)) + τ αᵀKα`,
//! `L(δ, h) = n₁⁻¹ 𝕀(δ = 1) eʰ − n₀⁻¹ 𝕀(δ = 0) h`.
//!
//! The inverse propensity follows as `ω̂(x) = 1 + (n₀ / n₁) ĝ(x)`.
//!
//! Internally the problem is solved in whitened coordinates: with a pivoted
//! Cholesky factor `K ≈ L Lᵀ` and `Kα = Lβ`, the penalty becomes `τ‖β‖²`,
//! which keeps L-BFGS well conditioned for moderate `τ`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::{gram, gram_symmetric, InputScaler, KernelSpec};
use crate::numerics::{log_space, minimize, MinimizeOptions, PivotedCholesky};
use crate::sample::LabeledSample;
use crate::Real;

/// Exponents above this are clamped before `exp`.
pub const EXP_CLAMP: f64 = 700.0;

/// Default relative diagonal tolerance of the pivoted Cholesky factor.
pub const PIVOT_TOL: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct DensityRatioModel<T> {
    spec: KernelSpec<T>,
    scaler: InputScaler<T>,
    support: Array2<T>,
    alpha0: T,
    alpha: Array1<T>,
    tau: T,
    n0: usize,
    n1: usize,
    exponent_clamped: bool,
}

impl<T: Real> DensityRatioModel<T> {
    /// Degenerate model for a sample without non-respondents: `ω̂ ≡ 1`.
    pub fn full_response(spec: KernelSpec<T>, scaler: InputScaler<T>, support: Array2<T>) -> Self {
        let n = support.nrows();
        Self {
            spec,
            scaler,
            support,
            alpha0: T::zero(),
            alpha: Array1::zeros(n),
            tau: T::zero(),
            n0: 0,
            n1: n,
            exponent_clamped: false,
        }
    }

    pub fn alpha0(&self) -> T {
        self.alpha0
    }

    pub fn alpha(&self) -> &Array1<T> {
        &self.alpha
    }

    pub fn tau(&self) -> T {
        self.tau
    }

    pub fn n0(&self) -> usize {
        self.n0
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn spec(&self) -> &KernelSpec<T> {
        &self.spec
    }

    /// True when the exponent clamp was active at the solution.
    pub fn exponent_clamped(&self) -> bool {
        self.exponent_clamped
    }

    /// `log ĝ(x)` for each row of `x`.
    pub fn log_ratio(&self, x: ArrayView2<'_, T>) -> Result<Array1<T>> {
        if x.ncols() != self.support.ncols() {
            return Err(Error::DimensionMismatch { expected: self.support.ncols(), found: x.ncols() });
        }
        if self.n0 == 0 || x.nrows() == 0 {
            return Ok(Array1::from_elem(x.nrows(), self.alpha0));
        }
        let k = gram(&self.spec, &self.scaler, x, self.support.view())?;
        Ok(k.dot(&self.alpha) + self.alpha0)
    }

    /// `ω̂` from precomputed kernel rows `k[i, j] = K(xᵢ, support_j)`.
    pub fn omega_from_gram(&self, k: ArrayView2<'_, T>) -> Result<Array1<T>> {
        if k.ncols() != self.support.nrows() {
            return Err(Error::DimensionMismatch { expected: self.support.nrows(), found: k.ncols() });
        }
        if self.n0 == 0 {
            return Ok(Array1::ones(k.nrows()));
        }
        let c = self.odds();
        Ok((k.dot(&self.alpha) + self.alpha0).mapv(|h| T::one() + c * clamped_exp(h)))
    }

    /// `ĝ(x)`.
    pub fn ratio(&self, x: ArrayView2<'_, T>) -> Result<Array1<T>> {
        Ok(self.log_ratio(x)?.mapv(clamped_exp))
    }

    /// `ω̂(x) = 1 + (n₀ / n₁) ĝ(x)`.
    pub fn omega(&self, x: ArrayView2<'_, T>) -> Result<Array1<T>> {
        let c = self.odds();
        Ok(self.ratio(x)?.mapv(|g| T::one() + c * g))
    }

    /// `p̂(x) = n₁ / (n₁ + n₀ ĝ(x))`, the implied response probability.
    pub fn response_probability(&self, x: ArrayView2<'_, T>) -> Result<Array1<T>> {
        let c = self.odds();
        Ok(self.ratio(x)?.mapv(|g| T::one() / (T::one() + c * g)))
    }

    fn odds(&self) -> T {
        T::from_usize_lossy(self.n0) / T::from_usize_lossy(self.n1)
    }
}

#[inline]
fn clamped_exp<T: Real>(h: T) -> T {
    h.min(T::lit(EXP_CLAMP)).exp()
}

/// Objective value and gradient in the original `(α₀, α)` coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValue<T> {
    pub value: T,
    /// `∂/∂α₀` first, then `∂/∂α₁ … ∂/∂αₙ`.
    pub gradient: Vec<T>,
    pub clamped: bool,
}

/// The maximum-entropy objective over a fixed Gram matrix.
#[derive(Debug, Clone, Copy)]
pub struct RatioProblem<'a, T> {
    gram: ArrayView2<'a, T>,
    delta: &'a [bool],
    n0: usize,
    n1: usize,
}

impl<'a, T: Real> RatioProblem<'a, T> {
    pub fn new(gram: ArrayView2<'a, T>, delta: &'a [bool]) -> Result<Self> {
        let n = delta.len();
        if gram.dim() != (n, n) {
            return Err(Error::DimensionMismatch { expected: n, found: gram.nrows() });
        }
        let n1 = delta.iter().filter(|&&d| d).count();
        let n0 = n - n1;
        if n1 == 0 {
            return Err(Error::NoResponders);
        }
        if n0 == 0 {
            return Err(Error::NoMissing);
        }
        Ok(Self { gram, delta, n0, n1 })
    }

    pub fn objective(&self, tau: T, alpha0: T, alpha: ArrayView1<'_, T>) -> ObjectiveValue<T> {
        let n = self.delta.len();
        let scores = self.gram.dot(&alpha);
        let inv_n1 = T::one() / T::from_usize_lossy(self.n1);
        let inv_n0 = T::one() / T::from_usize_lossy(self.n0);
        let clamp = T::lit(EXP_CLAMP);
        let mut value = T::zero();
        let mut clamped = false;
        let mut weights = Array1::zeros(n);
        let mut grad0 = -T::one();
        for i in 0..n {
            let h = alpha0 + scores[i];
            if self.delta[i] {
                clamped |= h > clamp;
                let e = clamped_exp(h) * inv_n1;
                value += e;
                weights[i] = e;
                grad0 += e;
            } else {
                value -= h * inv_n0;
                weights[i] = -inv_n0;
            }
        }
        value += tau * alpha.dot(&scores);
        // ∂/∂α_k = Σᵢ K(xᵢ, x_k) wᵢ + 2τ (Kα)_k
        let grad_alpha = self.gram.t().dot(&weights) + &scores * (T::lit(2.0) * tau);
        let mut gradient = Vec::with_capacity(n + 1);
        gradient.push(grad0);
        gradient.extend(grad_alpha.iter().copied());
        ObjectiveValue { value, gradient, clamped }
    }

    /// Closed-form `α₀` with `Σ_{δ=1} exp{α₀ + (Kα)ᵢ} = n₁`.
    pub fn normalize_alpha0(&self, alpha: ArrayView1<'_, T>) -> T {
        normalize_from_scores(self.gram.dot(&alpha).view(), self.delta, self.n1)
    }
}

fn normalize_from_scores<T: Real>(scores: ArrayView1<'_, T>, delta: &[bool], n1: usize) -> T {
    let max = scores.iter().zip(delta).filter(|(_, &d)| d).fold(T::neg_infinity(), |m, (s, _)| m.max(*s));
    let sum: T = scores.iter().zip(delta).filter(|(_, &d)| d).map(|(s, _)| (*s - max).exp()).sum();
    T::from_usize_lossy(n1).ln() - (max + sum.ln())
}

fn sample_gram<T: Real>(sample: &LabeledSample<T>, spec: &KernelSpec<T>) -> Result<(InputScaler<T>, Array2<T>)> {
    let scaler = InputScaler::fit(sample.x())?;
    let k = gram_symmetric(spec, &scaler, sample.x())?;
    Ok((scaler, k))
}

/// Objective and analytic gradient at `(α₀, α)`.
pub fn objective<T: Real>(
    sample: &LabeledSample<T>,
    spec: &KernelSpec<T>,
    tau: T,
    alpha0: T,
    alpha: ArrayView1<'_, T>,
) -> Result<ObjectiveValue<T>> {
    if tau < T::zero() {
        return Err(Error::InvalidInput("tau must be non-negative".into()));
    }
    if alpha.len() != sample.n() {
        return Err(Error::DimensionMismatch { expected: sample.n(), found: alpha.len() });
    }
    let (_, k) = sample_gram(sample, spec)?;
    Ok(RatioProblem::new(k.view(), sample.delta())?.objective(tau, alpha0, alpha))
}

pub fn normalize_alpha0<T: Real>(
    sample: &LabeledSample<T>,
    spec: &KernelSpec<T>,
    alpha: ArrayView1<'_, T>,
) -> Result<T> {
    if alpha.len() != sample.n() {
        return Err(Error::DimensionMismatch { expected: sample.n(), found: alpha.len() });
    }
    let (_, k) = sample_gram(sample, spec)?;
    Ok(normalize_from_scores(k.dot(&alpha).view(), sample.delta(), sample.n1()))
}

#[derive(Debug, Clone)]
pub struct RatioOptions<T> {
    pub optimizer: MinimizeOptions<T>,
    /// Pivoted Cholesky stops once every remaining diagonal of the Schur
    /// complement is below `pivot_tol · max diag`; `α` is supported on the pivots.
    pub pivot_tol: T,
}

impl<T: Real> Default for RatioOptions<T> {
    fn default() -> Self {
        Self { optimizer: MinimizeOptions::default(), pivot_tol: T::lit(PIVOT_TOL) }
    }
}

/// Solution of the penalized problem on one Gram matrix.
#[derive(Debug, Clone)]
pub struct RatioFit<T> {
    pub alpha0: T,
    pub alpha: Array1<T>,
    pub objective: T,
    pub converged: bool,
    pub iterations: usize,
    pub clamped: bool,
    /// Optimizer state `(α₀, β)` in whitened coordinates, for warm starts.
    state: Vec<T>,
}

/// Whitened solver reusable across `τ` on a fixed Gram matrix.
pub struct RatioSolver<'a, T> {
    problem: RatioProblem<'a, T>,
    factor: PivotedCholesky<T>,
}

impl<'a, T: Real> RatioSolver<'a, T> {
    pub fn new(gram: ArrayView2<'a, T>, delta: &'a [bool], pivot_tol: T) -> Result<Self> {
        let problem = RatioProblem::new(gram, delta)?;
        let factor = PivotedCholesky::factor(gram, pivot_tol);
        Ok(Self { problem, factor })
    }

    pub fn rank(&self) -> usize {
        self.factor.rank()
    }

    /// Minimizes from `warm` (a previous fit) or from zero.
    pub fn solve(&self, tau: T, warm: Option<&RatioFit<T>>, options: &RatioOptions<T>) -> Result<RatioFit<T>> {
        if !(tau > T::zero()) {
            return Err(Error::InvalidInput(format!("tau must be positive, got {tau}")));
        }
        let n = self.problem.delta.len();
        let r = self.rank();
        let l = &self.factor.l;
        let delta = self.problem.delta;
        let inv_n1 = T::one() / T::from_usize_lossy(self.problem.n1);
        let inv_n0 = T::one() / T::from_usize_lossy(self.problem.n0);
        let two_tau = T::lit(2.0) * tau;
        let mut h = vec![T::zero(); n];

        let f = |x: &[T], g: &mut [T]| -> T {
            let (a0, beta) = (x[0], &x[1..]);
            let ls = l.as_slice().expect("standard layout");
            for i in 0..n {
                let row = &ls[i * r..(i + 1) * r];
                let mut s = a0;
                for (lv, bv) in row.iter().zip(beta) {
                    s += *lv * *bv;
                }
                h[i] = s;
            }
            let mut value = T::zero();
            let mut g0 = -T::one();
            for v in g[1..].iter_mut() {
                *v = T::zero();
            }
            for i in 0..n {
                let w = if delta[i] {
                    let e = clamped_exp(h[i]) * inv_n1;
                    value += e;
                    g0 += e;
                    e
                } else {
                    value -= h[i] * inv_n0;
                    -inv_n0
                };
                let row = &ls[i * r..(i + 1) * r];
                for (gv, lv) in g[1..].iter_mut().zip(row) {
                    *gv += w * *lv;
                }
            }
            let mut pen = T::zero();
            for (gv, bv) in g[1..].iter_mut().zip(beta) {
                pen += *bv * *bv;
                *gv += two_tau * *bv;
            }
            g[0] = g0;
            value + tau * pen
        };

        let x0 = match warm {
            Some(w) if w.state.len() == r + 1 => w.state.clone(),
            _ => vec![T::zero(); r + 1],
        };
        let result = minimize(f, &x0, &options.optimizer)?;

        let beta = &result.minimizer[1..];
        let alpha_piv = self.factor.solve_pivot_block_transpose(beta);
        let mut alpha = Array1::zeros(n);
        for (k, &p) in self.factor.pivots.iter().enumerate() {
            alpha[p] = alpha_piv[k];
        }
        let scores = self.problem.gram.dot(&alpha);
        let alpha0 = normalize_from_scores(scores.view(), delta, self.problem.n1);
        let clamped = scores.iter().zip(delta).any(|(s, &d)| d && *s + alpha0 > T::lit(EXP_CLAMP));
        let objective = self.problem.objective(tau, alpha0, alpha.view()).value;
        Ok(RatioFit {
            alpha0,
            alpha,
            objective,
            converged: result.converged,
            iterations: result.iterations,
            clamped,
            state: result.minimizer,
        })
    }
}

/// Fits `ĝ` on the full sample from zero initialization, then normalizes `α₀`.
pub fn fit_ratio<T: Real>(sample: &LabeledSample<T>, spec: &KernelSpec<T>, tau: T) -> Result<DensityRatioModel<T>> {
    fit_ratio_with(sample, spec, tau, &RatioOptions::default())
}

pub fn fit_ratio_with<T: Real>(
    sample: &LabeledSample<T>,
    spec: &KernelSpec<T>,
    tau: T,
    options: &RatioOptions<T>,
) -> Result<DensityRatioModel<T>> {
    let (scaler, k) = sample_gram(sample, spec)?;
    fit_ratio_on_gram(sample, spec, &scaler, k.view(), tau, options)
}

/// Same as [`fit_ratio_with`] with a precomputed full-sample Gram matrix
/// `k = K(xᵢ, xⱼ)` built with `spec` and `scaler`.
pub fn fit_ratio_on_gram<T: Real>(
    sample: &LabeledSample<T>,
    spec: &KernelSpec<T>,
    scaler: &InputScaler<T>,
    k: ArrayView2<'_, T>,
    tau: T,
    options: &RatioOptions<T>,
) -> Result<DensityRatioModel<T>> {
    let solver = RatioSolver::new(k, sample.delta(), options.pivot_tol)?;
    let fit = solver.solve(tau, None, options)?;
    if fit.clamped {
        log::warn!("density-ratio fit at tau = {tau} hit the exponent clamp ({EXP_CLAMP})");
    }
    Ok(DensityRatioModel {
        spec: *spec,
        scaler: scaler.clone(),
        support: sample.x().to_owned(),
        alpha0: fit.alpha0,
        alpha: fit.alpha,
        tau,
        n0: sample.n0(),
        n1: sample.n1(),
        exponent_clamped: fit.clamped,
    })
}

/// 20 log-spaced points on `[1e-6, 1e2]`.
pub fn default_tau_grid() -> Vec<f64> {
    log_space(1e-6, 1e2, 20)
}

pub const DEFAULT_FOLDS: usize = 5;

/// Fold label per row: each δ-stratum is shuffled with a seeded stream and
/// dealt round-robin, so fold sizes within a stratum differ by at most one.
pub fn stratified_folds(delta: &[bool], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 folds, got {folds}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = vec![0; delta.len()];
    for stratum in [false, true] {
        let mut idx: Vec<usize> = (0..delta.len()).filter(|&i| delta[i] == stratum).collect();
        if idx.len() < folds {
            return Err(Error::StratumTooSmall { size: idx.len(), folds });
        }
        idx.shuffle(&mut rng);
        for (pos, &i) in idx.iter().enumerate() {
            labels[i] = pos % folds;
        }
    }
    Ok(labels)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TauSelection<T> {
    pub tau: T,
    /// `CV(τ)` per grid point (grid order).
    pub scores: Vec<T>,
}

/// Misclassification loss `𝕀(δ = 1, p̂ < ½) + 𝕀(δ = 0, p̂ > ½)`.
fn cv_loss<T: Real>(delta: bool, p_hat: T) -> T {
    let half = T::lit(0.5);
    if (delta && p_hat < half) || (!delta && p_hat > half) {
        T::one()
    } else {
        T::zero()
    }
}

/// Stratified K-fold selection of `τ`; ties go to the larger `τ`.
///
/// Within a fold the grid is traversed from the largest `τ` down, each fit
/// warm-started from the previous one.
pub fn cv_select_tau<T: Real>(
    sample: &LabeledSample<T>,
    spec: &KernelSpec<T>,
    grid: &[T],
    folds: usize,
    seed: u64,
) -> Result<TauSelection<T>> {
    let (_, k) = sample_gram(sample, spec)?;
    cv_select_tau_on_gram(k.view(), sample.delta(), grid, folds, seed, &RatioOptions::default())
}

pub fn cv_select_tau_on_gram<T: Real>(
    k: ArrayView2<'_, T>,
    delta: &[bool],
    grid: &[T],
    folds: usize,
    seed: u64,
    options: &RatioOptions<T>,
) -> Result<TauSelection<T>> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("tau grid is empty".into()));
    }
    if grid.iter().any(|t| !(*t > T::zero())) {
        return Err(Error::InvalidInput("tau grid must be positive".into()));
    }
    let labels = stratified_folds(delta, folds, seed)?;
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[b].partial_cmp(&grid[a]).unwrap_or(std::cmp::Ordering::Equal));

    let per_fold: Vec<Result<Vec<T>>> = (0..folds)
        .into_par_iter()
        .map(|fold| {
            let train: Vec<usize> = (0..delta.len()).filter(|&i| labels[i] != fold).collect();
            let test: Vec<usize> = (0..delta.len()).filter(|&i| labels[i] == fold).collect();
            let k_train = k.select(Axis(0), &train).select(Axis(1), &train);
            let k_test = k.select(Axis(0), &test).select(Axis(1), &train);
            let d_train: Vec<bool> = train.iter().map(|&i| delta[i]).collect();
            let n1 = d_train.iter().filter(|&&d| d).count();
            let odds = T::from_usize_lossy(d_train.len() - n1) / T::from_usize_lossy(n1);
            let solver = RatioSolver::new(k_train.view(), &d_train, options.pivot_tol)?;
            let mut losses = vec![T::zero(); grid.len()];
            let mut warm: Option<RatioFit<T>> = None;
            for &gi in &order {
                let fit = solver.solve(grid[gi], warm.as_ref(), options)?;
                let log_g = k_test.dot(&fit.alpha) + fit.alpha0;
                losses[gi] = test
                    .iter()
                    .zip(log_g.iter())
                    .map(|(&i, &lg)| cv_loss(delta[i], T::one() / (T::one() + odds * clamped_exp(lg))))
                    .sum();
                warm = Some(fit);
            }
            Ok(losses)
        })
        .collect();

    let mut scores = vec![T::zero(); grid.len()];
    for fold in per_fold {
        for (s, l) in scores.iter_mut().zip(fold?) {
            *s += l;
        }
    }
    let kf = T::from_usize_lossy(folds);
    for s in scores.iter_mut() {
        *s /= kf;
    }
    let mut best: Option<(T, T)> = None;
    for (&t, &s) in grid.iter().zip(&scores) {
        if !s.is_finite() {
            continue;
        }
        best = match best {
            Some((bt, bs)) if bs < s || (bs == s && bt >= t) => Some((bt, bs)),
            _ => Some((t, s)),
        };
    }
    let (tau, _) = best.ok_or(Error::AllScoresNonFinite)?;
    Ok(TauSelection { tau, scores })
}
