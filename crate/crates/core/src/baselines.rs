//! Comparison imputers fitted on the responders: ordinary least squares on
//! `[1, x]` and an additive cubic B-spline regression.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::numerics::solve_spd;
use crate::sample::{LabeledSample, RegressionFunction};
use crate::Real;

/// Ridge added to the normal equations when the spline design is rank deficient.
pub const SPLINE_RIDGE: f64 = 1e-8;

pub const DEFAULT_KNOTS: usize = 3;

/// Householder least squares. Errors with `RankDeficient` when a diagonal
/// entry of `R` is negligible relative to the largest.
fn least_squares<T: Real>(a: ArrayView2<'_, T>, b: ArrayView1<'_, T>) -> Result<Array1<T>> {
    let (m, p) = a.dim();
    if m < p {
        return Err(Error::RankDeficient);
    }
    let mut r = a.to_owned();
    let mut qtb = b.to_owned();
    let mut diag_max = T::zero();
    for j in 0..p {
        let norm = (j..m).map(|i| r[[i, j]] * r[[i, j]]).sum::<T>().sqrt();
        if norm == T::zero() {
            return Err(Error::RankDeficient);
        }
        let alpha = if r[[j, j]] > T::zero() { -norm } else { norm };
        let mut v: Vec<T> = (j..m).map(|i| r[[i, j]]).collect();
        v[0] -= alpha;
        let vnorm2: T = v.iter().map(|x| *x * *x).sum();
        if vnorm2 > T::zero() {
            for c in j..p {
                let dot: T = (j..m).map(|i| v[i - j] * r[[i, c]]).sum();
                let f = T::lit(2.0) * dot / vnorm2;
                for i in j..m {
                    r[[i, c]] -= f * v[i - j];
                }
            }
            let dot: T = (j..m).map(|i| v[i - j] * qtb[i]).sum();
            let f = T::lit(2.0) * dot / vnorm2;
            for i in j..m {
                qtb[i] -= f * v[i - j];
            }
        }
        diag_max = diag_max.max(r[[j, j]].abs());
    }
    let tol = T::epsilon() * T::from_usize_lossy(m.max(p)) * diag_max * T::lit(10.0);
    if (0..p).any(|j| r[[j, j]].abs() <= tol) {
        return Err(Error::RankDeficient);
    }
    let mut x = Array1::zeros(p);
    for j in (0..p).rev() {
        let mut s = qtb[j];
        for c in j + 1..p {
            s -= r[[j, c]] * x[c];
        }
        x[j] = s / r[[j, j]];
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel<T> {
    /// Intercept first.
    pub coefficients: Array1<T>,
}

impl<T: Real> LinearModel<T> {
    /// Least squares of `y` on `[1, x]` over the responders.
    pub fn fit(sample: &LabeledSample<T>) -> Result<Self> {
        let x = sample.responder_x();
        let y = sample.responder_y();
        let design = with_intercept(x.view());
        Ok(Self { coefficients: least_squares(design.view(), y.view())? })
    }
}

fn with_intercept<T: Real>(x: ArrayView2<'_, T>) -> Array2<T> {
    let (n, d) = x.dim();
    Array2::from_shape_fn((n, d + 1), |(i, j)| if j == 0 { T::one() } else { x[[i, j - 1]] })
}

impl<T: Real> RegressionFunction<T> for LinearModel<T> {
    fn predict(&self, x: ArrayView2<'_, T>) -> Result<Array1<T>> {
        if x.ncols() + 1 != self.coefficients.len() {
            return Err(Error::DimensionMismatch { expected: self.coefficients.len() - 1, found: x.ncols() });
        }
        Ok(with_intercept(x).dot(&self.coefficients))
    }
}

/// Clamped cubic B-spline basis on `[lo, hi]` with equispaced interior knots.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicBasis<T> {
    knots: Vec<T>,
}

impl<T: Real> CubicBasis<T> {
    pub fn new(lo: T, hi: T, interior: usize) -> Result<Self> {
        if !(hi > lo) {
            return Err(Error::InvalidInput(format!("spline range [{lo}, {hi}] is empty")));
        }
        let mut knots = vec![lo; 4];
        let step = (hi - lo) / T::from_usize_lossy(interior + 1);
        knots.extend((1..=interior).map(|k| lo + step * T::from_usize_lossy(k)));
        knots.extend([hi; 4]);
        Ok(Self { knots })
    }

    /// Number of basis functions, `interior + 4`.
    pub fn len(&self) -> usize {
        self.knots.len() - 4
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All basis values at `x` (clamped into the range), by Cox–de Boor.
    pub fn eval(&self, x: T) -> Vec<T> {
        let t = &self.knots;
        let (lo, hi) = (t[0], t[t.len() - 1]);
        let x = x.max(lo).min(hi);
        // last non-degenerate span containing x
        let mut span = 3;
        while span + 1 < t.len() - 4 && x >= t[span + 1] {
            span += 1;
        }
        let mut n = vec![T::zero(); 4];
        n[0] = T::one();
        let mut left = [T::zero(); 4];
        let mut right = [T::zero(); 4];
        for j in 1..=3 {
            left[j] = x - t[span + 1 - j];
            right[j] = t[span + j] - x;
            let mut saved = T::zero();
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom > T::zero() { n[r] / denom } else { T::zero() };
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        let mut out = vec![T::zero(); self.len()];
        for (k, v) in n.into_iter().enumerate() {
            out[span - 3 + k] = v;
        }
        out
    }
}

/// Additive cubic B-spline regression `β₀ + Σ_c Σ_k β_{ck} B_{ck}(x_c)`, with
/// the first basis function of every coordinate dropped for identifiability.
#[derive(Debug, Clone, PartialEq)]
pub struct BSplineModel<T> {
    bases: Vec<CubicBasis<T>>,
    coefficients: Array1<T>,
    ridged: bool,
}

impl<T: Real> BSplineModel<T> {
    /// Basis ranges come from all covariates in the sample; coefficients from
    /// the responders.
    pub fn fit(sample: &LabeledSample<T>, interior_knots: usize) -> Result<Self> {
        let x = sample.x();
        let mut bases = Vec::with_capacity(x.ncols());
        for c in 0..x.ncols() {
            let col = x.column(c);
            let lo = col.iter().copied().fold(T::infinity(), T::min);
            let hi = col.iter().copied().fold(T::neg_infinity(), T::max);
            let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - T::one(), hi + T::one()) };
            bases.push(CubicBasis::new(lo, hi, interior_knots)?);
        }
        let design = design_matrix(&bases, sample.responder_x().view());
        let y = sample.responder_y();
        let (coefficients, ridged) = match least_squares(design.view(), y.view()) {
            Ok(beta) => (beta, false),
            Err(Error::RankDeficient) => {
                log::warn!("spline design is rank deficient; adding ridge {SPLINE_RIDGE:e}");
                let gram = design.t().dot(&design);
                let rhs = design.t().dot(&y);
                (solve_spd(gram.view(), rhs.view(), T::lit(SPLINE_RIDGE))?.solution, true)
            }
            Err(e) => return Err(e),
        };
        Ok(Self { bases, coefficients, ridged })
    }

    pub fn coefficients(&self) -> &Array1<T> {
        &self.coefficients
    }

    /// True when the ridge fallback was used.
    pub fn ridged(&self) -> bool {
        self.ridged
    }
}

/// Columns: intercept, then basis functions `1..len` of each coordinate.
pub fn design_matrix<T: Real>(bases: &[CubicBasis<T>], x: ArrayView2<'_, T>) -> Array2<T> {
    let width = 1 + bases.iter().map(|b| b.len() - 1).sum::<usize>();
    let mut out = Array2::zeros((x.nrows(), width));
    for (i, row) in x.rows().into_iter().enumerate() {
        out[[i, 0]] = T::one();
        let mut col = 1;
        for (c, basis) in bases.iter().enumerate() {
            for v in basis.eval(row[c]).into_iter().skip(1) {
                out[[i, col]] = v;
                col += 1;
            }
        }
    }
    out
}

impl<T: Real> RegressionFunction<T> for BSplineModel<T> {
    fn predict(&self, x: ArrayView2<'_, T>) -> Result<Array1<T>> {
        if x.ncols() != self.bases.len() {
            return Err(Error::DimensionMismatch { expected: self.bases.len(), found: x.ncols() });
        }
        Ok(design_matrix(&self.bases, x).dot(&self.coefficients))
    }
}

/// Predictions outside `[0, 1]`, a diagnostic for binary outcomes.
pub fn out_of_unit_range<T: Real>(predictions: ArrayView1<'_, T>) -> usize {
    predictions.iter().filter(|p| **p < T::zero() || **p > T::one()).count()
}
