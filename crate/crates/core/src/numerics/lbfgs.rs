//! Limited-memory BFGS with Armijo backtracking.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::Real;

#[derive(Debug, Clone)]
pub struct MinimizeOptions<T> {
    /// Gradient infinity-norm tolerance. `None` uses `1e-8 · (1 + |f(x0)|)`.
    pub gtol: Option<T>,
    pub max_iter: usize,
    /// Number of stored curvature pairs.
    pub memory: usize,
    /// Armijo sufficient-decrease constant.
    pub armijo: T,
    /// Stop once an accepted step reduces `f` by at most `ftol · max(|f|, 1)`.
    pub ftol: T,
}

impl<T: Real> Default for MinimizeOptions<T> {
    fn default() -> Self {
        Self { gtol: None, max_iter: 1000, memory: 10, armijo: T::lit(1e-4), ftol: T::lit(1e-12) }
    }
}

impl<T: Real> MinimizeOptions<T> {
    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_gtol(mut self, gtol: T) -> Self {
        self.gtol = Some(gtol);
        self
    }
}

#[derive(Debug, Clone)]
pub struct OptimResult<T> {
    pub minimizer: Vec<T>,
    pub objective_value: T,
    pub gradient_inf_norm: T,
    pub iterations: usize,
    pub converged: bool,
    /// Objective at the starting point and at every accepted iterate.
    pub trace: Vec<T>,
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(x, y)| *x * *y).sum()
}

fn inf_norm<T: Real>(a: &[T]) -> T {
    a.iter().fold(T::zero(), |m, v| m.max(v.abs()))
}

/// Minimizes a smooth function given as `f(x, grad) -> value`, where the
/// callback must fill `grad` with the gradient at `x`.
///
/// Accepted iterates never increase the objective. Converges when the
/// gradient infinity norm drops to `gtol` or the relative reduction of `f`
/// falls to `ftol`; otherwise stops after `max_iter` iterations or when no
/// step along steepest descent satisfies the Armijo condition.
pub fn minimize<T, F>(mut f: F, x0: &[T], options: &MinimizeOptions<T>) -> Result<OptimResult<T>>
where
    T: Real,
    F: FnMut(&[T], &mut [T]) -> T,
{
    let n = x0.len();
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("initial point must be finite".into()));
    }
    let mut x = x0.to_vec();
    let mut g = vec![T::zero(); n];
    let mut fx = f(&x, &mut g);
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteObjective { iteration: 0 });
    }
    let gtol = options.gtol.unwrap_or_else(|| T::lit(1e-8) * (T::one() + fx.abs()));
    let memory = options.memory.max(1);
    let mut pairs: VecDeque<(Vec<T>, Vec<T>, T)> = VecDeque::with_capacity(memory);

    let mut x_new = vec![T::zero(); n];
    let mut g_new = vec![T::zero(); n];
    let mut dir = vec![T::zero(); n];
    let mut alpha_buf = vec![T::zero(); memory];
    let mut iterations = 0;
    let mut trace = vec![fx];
    let mut stalled = false;

    while iterations < options.max_iter {
        if inf_norm(&g) <= gtol {
            break;
        }
        // Two-loop recursion for dir = -H g.
        dir.copy_from_slice(&g);
        for (k, (s, y, rho)) in pairs.iter().enumerate().rev() {
            let a = *rho * dot(s, &dir);
            alpha_buf[k] = a;
            for (d, yi) in dir.iter_mut().zip(y) {
                *d -= a * *yi;
            }
        }
        let gamma = match pairs.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => T::one() / inf_norm(&g).max(T::one()),
        };
        for d in dir.iter_mut() {
            *d *= gamma;
        }
        for (k, (s, y, rho)) in pairs.iter().enumerate() {
            let b = *rho * dot(y, &dir);
            for (d, si) in dir.iter_mut().zip(s) {
                *d += (alpha_buf[k] - b) * *si;
            }
        }
        for d in dir.iter_mut() {
            *d = -*d;
        }
        let mut slope = dot(&g, &dir);
        if !(slope < T::zero()) {
            // Curvature information went stale; restart from steepest descent.
            pairs.clear();
            let scale = T::one() / inf_norm(&g).max(T::one());
            for (d, gi) in dir.iter_mut().zip(&g) {
                *d = -*gi * scale;
            }
            slope = dot(&g, &dir);
        }

        let mut step = T::one();
        let mut accepted = false;
        for _ in 0..80 {
            for i in 0..n {
                x_new[i] = x[i] + step * dir[i];
            }
            let f_new = f(&x_new, &mut g_new);
            if f_new.is_finite() && f_new <= fx + options.armijo * step * slope {
                if g_new.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteObjective { iteration: iterations + 1 });
                }
                let s: Vec<T> = x_new.iter().zip(&x).map(|(a, b)| *a - *b).collect();
                let y: Vec<T> = g_new.iter().zip(&g).map(|(a, b)| *a - *b).collect();
                let sy = dot(&s, &y);
                if sy > T::epsilon() * dot(&y, &y) {
                    if pairs.len() == memory {
                        pairs.pop_front();
                    }
                    pairs.push_back((s, y, T::one() / sy));
                }
                std::mem::swap(&mut x, &mut x_new);
                std::mem::swap(&mut g, &mut g_new);
                stalled = fx - f_new <= options.ftol * fx.abs().max(f_new.abs()).max(T::one());
                fx = f_new;
                trace.push(fx);
                accepted = true;
                break;
            }
            step /= T::lit(2.0);
        }
        iterations += 1;
        if stalled {
            break;
        }
        if !accepted {
            trace.push(fx);
            if pairs.is_empty() {
                break;
            }
            pairs.clear();
        }
    }

    let gradient_inf_norm = inf_norm(&g);
    Ok(OptimResult {
        minimizer: x,
        objective_value: fx,
        gradient_inf_norm,
        iterations,
        converged: gradient_inf_norm <= gtol || stalled,
        trace,
    })
}

/// Central-difference gradient `(f(x + h eᵢ) − f(x − h eᵢ)) / 2h`.
pub fn fd_gradient<T: Real, F: FnMut(&[T]) -> T>(mut f: F, x: &[T], h: T) -> Vec<T> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (T::lit(2.0) * h)
        })
        .collect()
}
