use crate::error::{Error, Result};
use crate::Real;

pub const MAX_BERNOULLI_ORDER: usize = 8;

/// Exact coefficients of `B_q(x)` in ascending powers, as `(numerator, denominator)`.
const BERNOULLI_COEFFS: [&[(i64, i64)]; MAX_BERNOULLI_ORDER + 1] = [
    &[(1, 1)],
    &[(-1, 2), (1, 1)],
    &[(1, 6), (-1, 1), (1, 1)],
    &[(0, 1), (1, 2), (-3, 2), (1, 1)],
    &[(-1, 30), (0, 1), (1, 1), (-2, 1), (1, 1)],
    &[(0, 1), (-1, 6), (0, 1), (5, 3), (-5, 2), (1, 1)],
    &[(1, 42), (0, 1), (-1, 2), (0, 1), (5, 2), (-3, 1), (1, 1)],
    &[(0, 1), (1, 6), (0, 1), (-7, 6), (0, 1), (7, 2), (-7, 2), (1, 1)],
    &[(-1, 30), (0, 1), (2, 3), (0, 1), (-7, 3), (0, 1), (14, 3), (-4, 1), (1, 1)],
];

fn factorial(q: usize) -> i64 {
    (1..=q as i64).product()
}

/// Polynomial with coefficients in ascending powers, evaluated by Horner's rule.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Poly<T>(pub(crate) Vec<T>);

impl<T: Real> Poly<T> {
    #[inline]
    pub(crate) fn eval(&self, x: T) -> T {
        self.0.iter().rev().fold(T::zero(), |acc, c| acc * x + *c)
    }
}

/// `B_q` scaled by `1 / divisor`.
fn scaled_bernoulli<T: Real>(q: usize, divisor: i64) -> Result<Poly<T>> {
    let coeffs = BERNOULLI_COEFFS.get(q).ok_or(Error::UnsupportedOrder(q))?;
    Ok(Poly(coeffs.iter().map(|&(num, den)| T::lit(num as f64) / T::lit((den * divisor) as f64)).collect()))
}

/// The Bernoulli polynomial `B_q(x)`, `0 ≤ q ≤ 8`.
pub fn bernoulli_poly<T: Real>(q: usize, x: T) -> Result<T> {
    Ok(scaled_bernoulli::<T>(q, 1)?.eval(x))
}

/// `k_q = B_q / q!` as a polynomial.
pub(crate) fn scaled_bernoulli_poly<T: Real>(q: usize) -> Result<Poly<T>> {
    scaled_bernoulli(q, factorial(q))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn low_orders() {
        assert_eq!(bernoulli_poly(0, 0.3f64).unwrap(), 1.0);
        assert_eq!(bernoulli_poly(1, 0.5f64).unwrap(), 0.0);
        assert!((bernoulli_poly(2, 0.0f64).unwrap() - 1.0 / 6.0).abs() < 1e-16);
    }

    #[test]
    fn order_out_of_range() {
        assert_eq!(bernoulli_poly(9, 0.5f64), Err(Error::UnsupportedOrder(9)));
    }

    #[test]
    fn reflection_symmetry() {
        // B_q(1 − x) = (−1)^q B_q(x)
        for q in 0..=8 {
            for i in 0..=20 {
                let x = i as f64 / 20.0;
                let sign = if q % 2 == 0 { 1.0 } else { -1.0 };
                let a = bernoulli_poly(q, 1.0 - x).unwrap();
                let b = sign * bernoulli_poly(q, x).unwrap();
                assert!((a - b).abs() < 1e-13, "q={q} x={x}");
            }
        }
    }
}
