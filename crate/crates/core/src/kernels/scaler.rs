use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Real;

/// Per-coordinate min–max map into `[0, 1]`, learned from training covariates.
///
/// Points outside the training range are clamped; a coordinate with zero
/// range maps to the constant `0.5`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaler<T> {
    min: Vec<T>,
    max: Vec<T>,
}

impl<T: Real> InputScaler<T> {
    pub fn fit(x: ArrayView2<'_, T>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::EmptyPointSet);
        }
        let d = x.ncols();
        let mut min = vec![T::infinity(); d];
        let mut max = vec![T::neg_infinity(); d];
        for row in x.rows() {
            for (c, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::InvalidInput("covariates must be finite".into()));
                }
                min[c] = min[c].min(v);
                max[c] = max[c].max(v);
            }
        }
        Ok(Self { min, max })
    }

    /// Scaler that leaves points in `[0, 1]^d` untouched.
    pub fn identity(d: usize) -> Self {
        Self { min: vec![T::zero(); d], max: vec![T::one(); d] }
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn min(&self) -> &[T] {
        &self.min
    }

    pub fn max(&self) -> &[T] {
        &self.max
    }

    #[inline]
    pub fn scale_coordinate(&self, c: usize, v: T) -> T {
        let range = self.max[c] - self.min[c];
        if range > T::zero() {
            ((v - self.min[c]) / range).max(T::zero()).min(T::one())
        } else {
            T::lit(0.5)
        }
    }

    pub fn transform(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: x.ncols() });
        }
        Ok(Array2::from_shape_fn(x.dim(), |(i, c)| self.scale_coordinate(c, x[[i, c]])))
    }
}
