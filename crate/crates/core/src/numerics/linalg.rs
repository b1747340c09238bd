//! Dense symmetric linear algebra on row-major `ndarray` matrices.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::Real;

/// Lower Cholesky factor `L` with `A + ridge·I = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    l: Array2<T>,
}

impl<T: Real> Cholesky<T> {
    /// Returns `None` when a pivot is not strictly positive.
    pub fn factor(a: ArrayView2<'_, T>, ridge: T) -> Option<Self> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "Cholesky needs a square matrix");
        let mut l = Array2::<T>::zeros((n, n));
        {
            let ls = l.as_slice_mut().expect("standard layout");
            for j in 0..n {
                let mut s = a[[j, j]] + ridge;
                for v in &ls[j * n..j * n + j] {
                    s -= *v * *v;
                }
                if !(s > T::zero()) || !s.is_finite() {
                    return None;
                }
                let d = s.sqrt();
                ls[j * n + j] = d;
                // Column j below the diagonal.
                for i in (j + 1)..n {
                    let (upper, lower) = ls.split_at_mut(i * n);
                    let rj = &upper[j * n..j * n + j];
                    let ri = &mut lower[..n];
                    let mut v = a[[i, j]];
                    for k in 0..j {
                        v -= ri[k] * rj[k];
                    }
                    ri[j] = v / d;
                }
            }
        }
        Some(Self { l })
    }

    pub fn lower(&self) -> ArrayView2<'_, T> {
        self.l.view()
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Solves `L Lᵀ x = b`.
    pub fn solve(&self, b: ArrayView1<'_, T>) -> Array1<T> {
        let mut x = b.to_owned();
        self.solve_in_place(x.as_slice_mut().expect("contiguous"));
        x
    }

    pub fn solve_in_place(&self, x: &mut [T]) {
        let n = self.dim();
        let l = self.l.as_slice().expect("standard layout");
        for i in 0..n {
            let row = &l[i * n..i * n + i];
            let mut v = x[i];
            for k in 0..i {
                v -= row[k] * x[k];
            }
            x[i] = v / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut v = x[i];
            for k in (i + 1)..n {
                v -= l[k * n + i] * x[k];
            }
            x[i] = v / l[i * n + i];
        }
    }

    /// `log det(L Lᵀ)`.
    pub fn log_det(&self) -> T {
        let two = T::lit(2.0);
        self.l.diag().iter().map(|d| two * d.ln()).sum()
    }
}

/// `L D Lᵀ` without pivoting; the fallback for indefinite-looking systems.
#[derive(Debug, Clone)]
struct Ldlt<T> {
    l: Array2<T>,
    d: Vec<T>,
}

impl<T: Real> Ldlt<T> {
    fn factor(a: ArrayView2<'_, T>, ridge: T) -> Option<Self> {
        let n = a.nrows();
        let scale = a.iter().fold(T::zero(), |m, v| m.max(v.abs())) + ridge.abs();
        let tiny = T::epsilon() * scale * T::from_usize_lossy(n.max(1));
        let mut l = Array2::<T>::eye(n);
        let mut d = vec![T::zero(); n];
        for j in 0..n {
            let mut s = a[[j, j]] + ridge;
            for k in 0..j {
                s -= l[[j, k]] * l[[j, k]] * d[k];
            }
            if !s.is_finite() || s.abs() <= tiny {
                return None;
            }
            d[j] = s;
            for i in (j + 1)..n {
                let mut v = a[[i, j]];
                for k in 0..j {
                    v -= l[[i, k]] * l[[j, k]] * d[k];
                }
                l[[i, j]] = v / s;
            }
        }
        Some(Self { l, d })
    }

    fn solve(&self, b: ArrayView1<'_, T>) -> Array1<T> {
        let n = self.d.len();
        let mut x = b.to_owned();
        for i in 0..n {
            for k in 0..i {
                let t = self.l[[i, k]] * x[k];
                x[i] -= t;
            }
        }
        for i in 0..n {
            x[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                let t = self.l[[k, i]] * x[k];
                x[i] -= t;
            }
        }
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolveMethod {
    Cholesky,
    LdltFallback,
}

#[derive(Debug, Clone)]
pub struct SolveReport<T> {
    pub solution: Array1<T>,
    pub residual_norm: T,
    pub method: SolveMethod,
}

/// Solves `(M + ridge·I) x = b` for symmetric `M`.
///
/// Tries Cholesky first and falls back to an unpivoted `LDLᵀ`. The solution
/// is accepted only if `‖(M + ridge·I)x − b‖ ≤ 1e-8 (1 + ‖b‖)`.
pub fn solve_spd<T: Real>(m: ArrayView2<'_, T>, b: ArrayView1<'_, T>, ridge: T) -> Result<SolveReport<T>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, found: m.ncols() });
    }
    if b.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: b.len() });
    }
    if ridge < T::zero() {
        return Err(Error::InvalidInput("ridge must be non-negative".into()));
    }
    let bound = T::lit(1e-8) * (T::one() + norm2(b));
    let residual = |x: &Array1<T>| {
        let mut r = m.dot(x) - b;
        r.scaled_add(ridge, x);
        norm2(r.view())
    };

    let mut worst = T::infinity();
    if let Some(chol) = Cholesky::factor(m, ridge) {
        let x = chol.solve(b);
        let res = residual(&x);
        if res <= bound {
            return Ok(SolveReport { solution: x, residual_norm: res, method: SolveMethod::Cholesky });
        }
        worst = res;
    }
    if let Some(ldlt) = Ldlt::factor(m, ridge) {
        let x = ldlt.solve(b);
        let res = residual(&x);
        if res <= bound {
            return Ok(SolveReport { solution: x, residual_norm: res, method: SolveMethod::LdltFallback });
        }
        if res.is_finite() {
            worst = worst.min(res);
        }
    }
    Err(Error::NumericalSingularity { residual: worst.to_f64_lossy() })
}

pub fn norm2<T: Real>(v: ArrayView1<'_, T>) -> T {
    v.iter().map(|x| *x * *x).sum::<T>().sqrt()
}

/// Householder reduction `A = Q T Qᵀ` of a symmetric matrix to tridiagonal `T`.
///
/// `Q` is kept implicitly as the sequence of reflectors so that `Qᵀ v` can be
/// applied in `O(n²)`.
#[derive(Debug, Clone)]
pub struct Tridiagonal<T> {
    pub diag: Vec<T>,
    /// `off[i]` couples rows `i` and `i + 1`.
    pub off: Vec<T>,
    reflectors: Vec<(usize, Vec<T>, T)>,
}

impl<T: Real> Tridiagonal<T> {
    pub fn reduce(a: ArrayView2<'_, T>) -> Self {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "tridiagonalization needs a square matrix");
        let mut w: Vec<T> = a.iter().copied().collect();
        let mut reflectors = Vec::with_capacity(n.saturating_sub(2));
        let mut p = vec![T::zero(); n];
        for k in 0..n.saturating_sub(2) {
            let start = k + 1;
            let m = n - start;
            // Householder vector for column k below the diagonal.
            let mut v: Vec<T> = (start..n).map(|i| w[i * n + k]).collect();
            let alpha = v.iter().map(|x| *x * *x).sum::<T>().sqrt();
            if alpha == T::zero() {
                continue;
            }
            let sign = if v[0] >= T::zero() { T::one() } else { -T::one() };
            v[0] += sign * alpha;
            let vnorm2: T = v.iter().map(|x| *x * *x).sum();
            if vnorm2 == T::zero() {
                continue;
            }
            let beta = T::lit(2.0) / vnorm2;
            // p = beta * A22 v (A22 symmetric; use full rows for contiguity).
            for (ii, i) in (start..n).enumerate() {
                let row = &w[i * n + start..i * n + n];
                let mut s = T::zero();
                for (a, b) in row.iter().zip(v.iter()) {
                    s += *a * *b;
                }
                p[ii] = beta * s;
            }
            let ptv: T = p[..m].iter().zip(v.iter()).map(|(a, b)| *a * *b).sum();
            let half_beta_ptv = beta * ptv / T::lit(2.0);
            for ii in 0..m {
                p[ii] -= half_beta_ptv * v[ii];
            }
            // A22 -= v pᵀ + p vᵀ
            for (ii, i) in (start..n).enumerate() {
                let vi = v[ii];
                let pi = p[ii];
                let row = &mut w[i * n + start..i * n + n];
                for jj in 0..m {
                    row[jj] -= vi * p[jj] + pi * v[jj];
                }
            }
            // Column/row k: only the subdiagonal survives.
            let new_sub = -sign * alpha;
            w[start * n + k] = new_sub;
            w[k * n + start] = new_sub;
            for i in (start + 1)..n {
                w[i * n + k] = T::zero();
                w[k * n + i] = T::zero();
            }
            reflectors.push((start, v, beta));
        }
        let diag = (0..n).map(|i| w[i * n + i]).collect();
        let off = (0..n.saturating_sub(1)).map(|i| w[(i + 1) * n + i]).collect();
        Self { diag, off, reflectors }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// Overwrites `x` with `Qᵀ x`.
    pub fn apply_qt(&self, x: &mut [T]) {
        for (start, v, beta) in &self.reflectors {
            let s: T = v.iter().zip(&x[*start..]).map(|(a, b)| *a * *b).sum();
            let f = *beta * s;
            for (xi, vi) in x[*start..].iter_mut().zip(v.iter()) {
                *xi -= f * *vi;
            }
        }
    }

    /// Overwrites `x` with `Q x`.
    pub fn apply_q(&self, x: &mut [T]) {
        for (start, v, beta) in self.reflectors.iter().rev() {
            let s: T = v.iter().zip(&x[*start..]).map(|(a, b)| *a * *b).sum();
            let f = *beta * s;
            for (xi, vi) in x[*start..].iter_mut().zip(v.iter()) {
                *xi -= f * *vi;
            }
        }
    }

    pub fn eigenvalues(&self) -> Result<Vec<T>> {
        tridiagonal_eigenvalues(&self.diag, &self.off)
    }

    /// Solves `(T + shift·I) w = rhs` by the Thomas algorithm.
    ///
    /// Returns `None` if a pivot vanishes (the shifted matrix is singular or
    /// far from positive definite).
    pub fn solve_shifted(&self, shift: T, rhs: &[T]) -> Option<Vec<T>> {
        let n = self.dim();
        let mut c = vec![T::zero(); n];
        let mut d = vec![T::zero(); n];
        let mut denom = self.diag[0] + shift;
        if denom == T::zero() || !denom.is_finite() {
            return None;
        }
        if n > 1 {
            c[0] = self.off[0] / denom;
        }
        d[0] = rhs[0] / denom;
        for i in 1..n {
            denom = self.diag[i] + shift - self.off[i - 1] * c[i - 1];
            if denom == T::zero() || !denom.is_finite() {
                return None;
            }
            if i < n - 1 {
                c[i] = self.off[i] / denom;
            }
            d[i] = (rhs[i] - self.off[i - 1] * d[i - 1]) / denom;
        }
        for i in (0..n.saturating_sub(1)).rev() {
            let t = c[i] * d[i + 1];
            d[i] -= t;
        }
        Some(d)
    }
}

/// Eigenvalues of a symmetric tridiagonal matrix by implicit QL with Wilkinson
/// shifts, in ascending order.
pub fn tridiagonal_eigenvalues<T: Real>(diag: &[T], off: &[T]) -> Result<Vec<T>> {
    let n = diag.len();
    let mut d = diag.to_vec();
    let mut e = vec![T::zero(); n];
    e[..n.saturating_sub(1)].copy_from_slice(&off[..n.saturating_sub(1)]);
    let two = T::lit(2.0);
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= T::epsilon() * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(Error::InvalidInput("tridiagonal QL failed to converge".into()));
            }
            let mut g = (d[l + 1] - d[l]) / (two * e[l]);
            let mut r = g.hypot(T::one());
            g = d[m] - d[l] + e[l] / (g + r.abs().copysign(g));
            let mut s = T::one();
            let mut c = T::one();
            let mut p = T::zero();
            let mut i = m;
            let mut underflow = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == T::zero() {
                    d[i + 1] -= p;
                    e[m] = T::zero();
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + two * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = T::zero();
        }
    }
    d.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    Ok(d)
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn symmetric_eigenvalues<T: Real>(a: ArrayView2<'_, T>) -> Result<Vec<T>> {
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    Tridiagonal::reduce(a).eigenvalues()
}

/// Pivoted (rank-revealing) Cholesky `A ≈ L Lᵀ` of a PSD matrix.
///
/// Stops once every remaining residual diagonal is below
/// `rel_tol · max diag(A)`. Columns of `L` are in pivot order; rows keep the
/// original indexing, and `pivots[k]` is the row chosen at step `k`.
#[derive(Debug, Clone)]
pub struct PivotedCholesky<T> {
    /// `n × r`.
    pub l: Array2<T>,
    pub pivots: Vec<usize>,
}

impl<T: Real> PivotedCholesky<T> {
    pub fn factor(a: ArrayView2<'_, T>, rel_tol: T) -> Self {
        let n = a.nrows();
        let mut resid: Vec<T> = (0..n).map(|i| a[[i, i]]).collect();
        let max_diag = resid.iter().fold(T::zero(), |m, v| m.max(*v));
        let stop = rel_tol * max_diag;
        // Column-major scratch: cols[k] is the k-th column of L.
        let mut cols: Vec<Vec<T>> = Vec::new();
        let mut pivots = Vec::new();
        let mut used = vec![false; n];
        while pivots.len() < n {
            let (j, &dj) = match resid
                .iter()
                .enumerate()
                .filter(|(i, _)| !used[*i])
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
            {
                Some(v) => v,
                None => break,
            };
            if !(dj > stop) {
                break;
            }
            let root = dj.sqrt();
            let mut col = vec![T::zero(); n];
            for i in 0..n {
                if used[i] {
                    continue;
                }
                let mut v = a[[i, j]];
                for c in &cols {
                    v -= c[i] * c[j];
                }
                col[i] = v / root;
            }
            col[j] = root;
            used[j] = true;
            for i in 0..n {
                if !used[i] {
                    resid[i] -= col[i] * col[i];
                }
            }
            resid[j] = T::zero();
            cols.push(col);
            pivots.push(j);
        }
        let r = cols.len();
        let mut l = Array2::zeros((n, r));
        for (k, c) in cols.iter().enumerate() {
            for i in 0..n {
                l[[i, k]] = c[i];
            }
        }
        Self { l, pivots }
    }

    pub fn rank(&self) -> usize {
        self.pivots.len()
    }

    /// Solves `L_ppᵀ a = beta`, where `L_pp` is the (lower triangular) block of
    /// `L` restricted to the pivot rows.
    pub fn solve_pivot_block_transpose(&self, beta: &[T]) -> Vec<T> {
        let r = self.rank();
        let mut a = beta.to_vec();
        for k in (0..r).rev() {
            let mut v = a[k];
            for (&p, &aj) in self.pivots[k + 1..r].iter().zip(&a[k + 1..r]) {
                v -= self.l[[p, k]] * aj;
            }
            a[k] = v / self.l[[self.pivots[k], k]];
        }
        a
    }
}
