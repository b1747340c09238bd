//! Shared numerical routines: symmetric solves and spectra, L-BFGS,
//! normal quantiles and finite-difference gradients.

mod lbfgs;
mod linalg;
mod quantile;

pub use lbfgs::{fd_gradient, minimize, MinimizeOptions, OptimResult};
pub use linalg::{
    norm2, solve_spd, symmetric_eigenvalues, tridiagonal_eigenvalues, Cholesky, PivotedCholesky, SolveMethod,
    SolveReport, Tridiagonal,
};
pub use quantile::norm_quantile;

/// `count` log-spaced points from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..count).map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp()).collect()
        }
    }
}
