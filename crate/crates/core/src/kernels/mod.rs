//! Reproducing kernels on the unit cube and their Gram matrices.
//!
//! The Sobolev kernel of order `ℓ` on `[0, 1]` is built from scaled Bernoulli
//! polynomials `k_q = B_q / q!`:
//!
//! `K(x, y) = Σ_{q<ℓ} k_q(x) k_q(y) + k_ℓ(x) k_ℓ(y) + s · k_{2ℓ}(|x − y|)`
//!
//! where the sign `s` is `(−1)^ℓ` ([`SignConvention::AlternateSign`]) or
//! `(−1)^{ℓ−1}` ([`SignConvention::StandardSign`]). Multivariate inputs use the
//! coordinate-wise product of univariate kernels, after min–max scaling of
//! every coordinate into `[0, 1]`.

mod bernoulli;
mod scaler;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::symmetric_eigenvalues;
use crate::Real;

pub use bernoulli::{bernoulli_poly, MAX_BERNOULLI_ORDER};
pub use scaler::InputScaler;

use bernoulli::{scaled_bernoulli_poly, Poly};

/// Largest supported Sobolev order (`k_{2ℓ}` needs `B_{2ℓ}`).
pub const MAX_SOBOLEV_ORDER: usize = MAX_BERNOULLI_ORDER / 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignConvention {
    /// `(−1)^ℓ` on the `k_{2ℓ}` term.
    AlternateSign,
    /// `(−1)^{ℓ−1}` on the `k_{2ℓ}` term (classical spline kernel).
    StandardSign,
}

impl SignConvention {
    fn factor<T: Real>(self, order: usize) -> T {
        let exponent = match self {
            SignConvention::AlternateSign => order,
            SignConvention::StandardSign => order + 1,
        };
        if exponent % 2 == 0 {
            T::one()
        } else {
            -T::one()
        }
    }
}

/// How univariate kernels combine across coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MultivariateRule {
    Product,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KernelSpec<T> {
    Sobolev { order: usize, sign: SignConvention, rule: MultivariateRule },
    Gaussian { bandwidth: T },
}

impl<T: Real> KernelSpec<T> {
    /// Sobolev kernel of the given order using the sign convention picked by
    /// [`validate_psd`].
    pub fn sobolev(order: usize) -> Result<Self> {
        let sign = validate_psd(order)?;
        Ok(Self::Sobolev { order, sign, rule: MultivariateRule::Product })
    }

    pub fn sobolev_with_sign(order: usize, sign: SignConvention) -> Result<Self> {
        check_sobolev_order(order)?;
        Ok(Self::Sobolev { order, sign, rule: MultivariateRule::Product })
    }

    pub fn gaussian(bandwidth: T) -> Result<Self> {
        if !(bandwidth > T::zero()) || !bandwidth.is_finite() {
            return Err(Error::InvalidInput(format!("Gaussian bandwidth must be positive, got {bandwidth}")));
        }
        Ok(Self::Gaussian { bandwidth })
    }

    /// Sobolev order, or `None` for the Gaussian kernel.
    pub fn order(&self) -> Option<usize> {
        match self {
            KernelSpec::Sobolev { order, .. } => Some(*order),
            KernelSpec::Gaussian { .. } => None,
        }
    }

    pub fn summary(&self) -> String {
        match self {
            KernelSpec::Sobolev { order, sign, .. } => format!("sobolev(order={order}, sign={sign:?}, rule=Product)"),
            KernelSpec::Gaussian { bandwidth } => format!("gaussian(bandwidth={bandwidth})"),
        }
    }
}

/// Kernel family plus hyperparameters that may still depend on the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KernelChoice<T> {
    Sobolev {
        order: usize,
    },
    SobolevWithSign {
        order: usize,
        sign: SignConvention,
    },
    /// `None` selects the bandwidth by the median heuristic.
    Gaussian {
        bandwidth: Option<T>,
    },
}

impl<T: Real> Default for KernelChoice<T> {
    fn default() -> Self {
        KernelChoice::Sobolev { order: 2 }
    }
}

impl<T: Real> KernelChoice<T> {
    /// Resolves data-dependent hyperparameters. `reference` are the raw
    /// responder covariates used by the median heuristic.
    pub fn resolve(&self, scaler: &InputScaler<T>, reference: ArrayView2<'_, T>) -> Result<KernelSpec<T>> {
        match *self {
            KernelChoice::Sobolev { order } => KernelSpec::sobolev(order),
            KernelChoice::SobolevWithSign { order, sign } => KernelSpec::sobolev_with_sign(order, sign),
            KernelChoice::Gaussian { bandwidth: Some(b) } => KernelSpec::gaussian(b),
            KernelChoice::Gaussian { bandwidth: None } => {
                KernelSpec::gaussian(median_heuristic(scaler.transform(reference)?.view())?)
            }
        }
    }
}

fn check_sobolev_order(order: usize) -> Result<()> {
    if order == 0 || order > MAX_SOBOLEV_ORDER {
        return Err(Error::InvalidInput(format!("Sobolev order must be in 1..={MAX_SOBOLEV_ORDER}, got {order}")));
    }
    Ok(())
}

/// Precomputed univariate Sobolev kernel.
#[derive(Debug, Clone)]
struct Sobolev<T> {
    /// `k_0 .. k_ℓ`.
    low: Vec<Poly<T>>,
    /// `s · k_{2ℓ}`.
    high: Poly<T>,
}

impl<T: Real> Sobolev<T> {
    fn new(order: usize, sign: SignConvention) -> Result<Self> {
        check_sobolev_order(order)?;
        let low = (0..=order).map(scaled_bernoulli_poly).collect::<Result<Vec<_>>>()?;
        let s: T = sign.factor(order);
        let Poly(c) = scaled_bernoulli_poly::<T>(2 * order)?;
        Ok(Self { low, high: Poly(c.into_iter().map(|v| v * s).collect()) })
    }

    fn features(&self, x: T, out: &mut Vec<T>) {
        out.extend(self.low.iter().map(|p| p.eval(x)));
    }

    #[inline]
    fn combine(&self, fx: &[T], fy: &[T], x: T, y: T) -> T {
        let mut v = self.high.eval((x - y).abs());
        for (a, b) in fx.iter().zip(fy) {
            v += *a * *b;
        }
        v
    }
}

fn check_unit(v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::OutOfDomain(v))
    }
}

/// Univariate Sobolev kernel of order `ℓ` on `[0, 1]`.
pub fn sobolev_kernel<T: Real>(order: usize, x: T, y: T, sign: SignConvention) -> Result<T> {
    check_unit(x.to_f64_lossy())?;
    check_unit(y.to_f64_lossy())?;
    let k = Sobolev::new(order, sign)?;
    let (mut fx, mut fy) = (Vec::new(), Vec::new());
    k.features(x, &mut fx);
    k.features(y, &mut fy);
    Ok(k.combine(&fx, &fy, x, y))
}

/// `exp(−‖x − y‖² / (2 b²))`.
pub fn gaussian_kernel<T: Real>(bandwidth: T, x: &[T], y: &[T]) -> Result<T> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), found: y.len() });
    }
    let d2: T = x.iter().zip(y).map(|(a, b)| (*a - *b) * (*a - *b)).sum();
    Ok((-d2 / (T::lit(2.0) * bandwidth * bandwidth)).exp())
}

/// Median of pairwise Euclidean distances between rows.
pub fn median_heuristic<T: Real>(points: ArrayView2<'_, T>) -> Result<T> {
    let n = points.nrows();
    if n < 2 {
        return Err(Error::InvalidInput("median heuristic needs at least two points".into()));
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let d2: T = points.row(i).iter().zip(points.row(j)).map(|(a, b)| (*a - *b) * (*a - *b)).sum();
            dists.push(d2.sqrt());
        }
    }
    let mid = dists.len() / 2;
    let (_, m, _) = dists.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let m = *m;
    if m > T::zero() {
        Ok(m)
    } else {
        Err(Error::InvalidInput("median pairwise distance is zero".into()))
    }
}

/// Kernel ready to evaluate on already-scaled points.
#[derive(Debug, Clone)]
enum Compiled<T> {
    Sobolev(Sobolev<T>),
    Gaussian { bandwidth: T },
}

impl<T: Real> Compiled<T> {
    fn new(spec: &KernelSpec<T>) -> Result<Self> {
        Ok(match *spec {
            KernelSpec::Sobolev { order, sign, .. } => Compiled::Sobolev(Sobolev::new(order, sign)?),
            KernelSpec::Gaussian { bandwidth } => Compiled::Gaussian { bandwidth },
        })
    }
}

/// Per-point precomputation for fast Gram assembly.
struct Prepared<T> {
    scaled: Array2<T>,
    /// Sobolev only: row-major `n × d × (ℓ + 1)` feature block.
    features: Vec<T>,
    width: usize,
}

impl<T: Real> Prepared<T> {
    fn new(kernel: &Compiled<T>, scaled: Array2<T>) -> Result<Self> {
        let mut features = Vec::new();
        let mut width = 0;
        if let Compiled::Sobolev(k) = kernel {
            for &v in scaled.iter() {
                check_unit(v.to_f64_lossy())?;
            }
            width = k.low.len();
            features.reserve(scaled.len() * width);
            for &v in scaled.iter() {
                k.features(v, &mut features);
            }
        }
        Ok(Self { scaled, features, width })
    }

    #[inline]
    fn entry(&self, kernel: &Compiled<T>, i: usize, other: &Prepared<T>, j: usize) -> T {
        let d = self.scaled.ncols();
        let a = self.scaled.row(i);
        let b = other.scaled.row(j);
        match kernel {
            Compiled::Sobolev(k) => {
                let w = self.width;
                let mut prod = T::one();
                for c in 0..d {
                    let fa = &self.features[(i * d + c) * w..(i * d + c + 1) * w];
                    let fb = &other.features[(j * d + c) * w..(j * d + c + 1) * w];
                    prod *= k.combine(fa, fb, a[c], b[c]);
                }
                prod
            }
            Compiled::Gaussian { bandwidth } => {
                let mut d2 = T::zero();
                for c in 0..d {
                    let t = a[c] - b[c];
                    d2 += t * t;
                }
                (-d2 / (T::lit(2.0) * *bandwidth * *bandwidth)).exp()
            }
        }
    }
}

/// Gram matrix `K(scale(aᵢ), scale(bⱼ))`.
pub fn gram<T: Real>(
    spec: &KernelSpec<T>,
    scaler: &InputScaler<T>,
    a: ArrayView2<'_, T>,
    b: ArrayView2<'_, T>,
) -> Result<Array2<T>> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::EmptyPointSet);
    }
    let kernel = Compiled::new(spec)?;
    let pa = Prepared::new(&kernel, scaler.transform(a)?)?;
    let pb = Prepared::new(&kernel, scaler.transform(b)?)?;
    Ok(Array2::from_shape_fn((a.nrows(), b.nrows()), |(i, j)| pa.entry(&kernel, i, &pb, j)))
}

/// Square Gram matrix of one point set; computed on the lower triangle and
/// mirrored, so it is exactly symmetric.
pub fn gram_symmetric<T: Real>(
    spec: &KernelSpec<T>,
    scaler: &InputScaler<T>,
    a: ArrayView2<'_, T>,
) -> Result<Array2<T>> {
    let n = a.nrows();
    if n == 0 {
        return Err(Error::EmptyPointSet);
    }
    let kernel = Compiled::new(spec)?;
    let pa = Prepared::new(&kernel, scaler.transform(a)?)?;
    let mut k = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let v = pa.entry(&kernel, i, &pa, j);
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
    }
    Ok(k)
}

/// Outcome of a positive-semidefiniteness check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsdReport<T> {
    pub min_eigenvalue: T,
    pub max_abs_eigenvalue: T,
    pub tolerance: T,
}

/// Fails unless `λ_min ≥ −1e-8 · max |λ|`.
pub fn check_psd<T: Real>(k: ArrayView2<'_, T>) -> Result<PsdReport<T>> {
    let ev = symmetric_eigenvalues(k)?;
    let min_eigenvalue = ev.first().copied().unwrap_or_else(T::zero);
    let max_abs_eigenvalue = ev.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    let tolerance = T::lit(1e-8) * max_abs_eigenvalue;
    if min_eigenvalue < -tolerance {
        return Err(Error::NotPositiveSemidefinite {
            min_eigenvalue: min_eigenvalue.to_f64_lossy(),
            tolerance: tolerance.to_f64_lossy(),
        });
    }
    Ok(PsdReport { min_eigenvalue, max_abs_eigenvalue, tolerance })
}

/// Picks the sign convention whose Gram matrix on a fixed 50-point grid of
/// `[0, 1]` is positive semidefinite, preferring [`SignConvention::StandardSign`].
pub fn validate_psd(order: usize) -> Result<SignConvention> {
    check_sobolev_order(order)?;
    let grid = Array2::from_shape_fn((50, 1), |(i, _)| i as f64 / 49.0);
    let scaler = InputScaler::identity(1);
    let mut last_err = None;
    for sign in [SignConvention::StandardSign, SignConvention::AlternateSign] {
        let spec = KernelSpec::Sobolev { order, sign, rule: MultivariateRule::Product };
        let k = gram_symmetric(&spec, &scaler, grid.view())?;
        match check_psd(k.view()) {
            Ok(_) => return Ok(sign),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.expect("at least one convention was checked"))
}
