use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::Real;

/// Covariates, responses and response indicators for one sample.
///
/// Covariates are always observed. `y[i]` is only meaningful where
/// `delta[i]` is true; other entries may hold any placeholder (NaN included).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample<T> {
    x: Array2<T>,
    y: Array1<T>,
    delta: Vec<bool>,
}

impl<T: Real> LabeledSample<T> {
    pub fn new(x: Array2<T>, y: Array1<T>, delta: Vec<bool>) -> Result<Self> {
        let n = x.nrows();
        if n < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 rows, got {n}")));
        }
        if x.ncols() == 0 {
            return Err(Error::InvalidInput("covariate matrix has no columns".into()));
        }
        if y.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: y.len() });
        }
        if delta.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: delta.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("covariates must be finite".into()));
        }
        if !delta.iter().any(|&d| d) {
            return Err(Error::NoResponders);
        }
        if let Some(i) = (0..n).find(|&i| delta[i] && !y[i].is_finite()) {
            return Err(Error::InvalidInput(format!("observed response at row {i} is not finite")));
        }
        Ok(Self { x, y, delta })
    }

    pub fn x(&self) -> ArrayView2<'_, T> {
        self.x.view()
    }

    pub fn y(&self) -> ArrayView1<'_, T> {
        self.y.view()
    }

    pub fn delta(&self) -> &[bool] {
        &self.delta
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Number of responders.
    pub fn n1(&self) -> usize {
        self.delta.iter().filter(|&&d| d).count()
    }

    /// Number of non-respondents.
    pub fn n0(&self) -> usize {
        self.n() - self.n1()
    }

    pub fn responder_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.delta[i]).collect()
    }

    pub fn missing_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| !self.delta[i]).collect()
    }

    pub fn responder_x(&self) -> Array2<T> {
        self.x.select(Axis(0), &self.responder_indices())
    }

    pub fn responder_y(&self) -> Array1<T> {
        self.y.select(Axis(0), &self.responder_indices())
    }

    /// Mean of the observed responses.
    pub fn complete_case_mean(&self) -> T {
        let idx = self.responder_indices();
        idx.iter().map(|&i| self.y[i]).sum::<T>() / T::from_usize_lossy(idx.len())
    }
}

/// Anything that can predict the regression function at new points.
pub trait RegressionFunction<T: Real> {
    fn predict(&self, x: ArrayView2<'_, T>) -> Result<Array1<T>>;
}

/// The imputation estimator `n⁻¹ Σ { δᵢ yᵢ + (1 − δᵢ) m̂(xᵢ) }`.
pub fn impute_with<T: Real, M: RegressionFunction<T> + ?Sized>(model: &M, sample: &LabeledSample<T>) -> Result<T> {
    let missing = sample.missing_indices();
    let predictions = if missing.is_empty() {
        Array1::zeros(0)
    } else {
        model.predict(sample.x().select(Axis(0), &missing).view())?
    };
    Ok(imputed_mean(sample, &missing, predictions.view()))
}

/// Imputation mean given predictions at the missing rows (in `missing` order).
pub(crate) fn imputed_mean<T: Real>(sample: &LabeledSample<T>, missing: &[usize], predictions: ArrayView1<'_, T>) -> T {
    let mut filled = sample.y().to_owned();
    for (&i, &p) in missing.iter().zip(predictions.iter()) {
        filled[i] = p;
    }
    filled.sum() / T::from_usize_lossy(sample.n())
}
