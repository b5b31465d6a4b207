//! Dense univariate polynomials with real coefficients, highest degree first.
//!
//! This is the coefficient convention used throughout the crate: `[a, b, c]`
//! means `a*s^2 + b*s + c`. The zero polynomial is represented as `[0.0]`.

use num_complex::Complex64;

#[derive(Debug, Clone, PartialEq)]
pub struct Poly {
    coeffs: Vec<f64>,
}

impl Poly {
    /// Builds a polynomial from highest-degree-first coefficients, trimming
    /// leading zeros so the leading coefficient is nonzero (or the polynomial
    /// collapses to the zero polynomial `[0.0]`).
    pub fn new(coeffs: impl Into<Vec<f64>>) -> Self {
        let mut c: Vec<f64> = coeffs.into();
        if c.is_empty() {
            c.push(0.0);
        }
        let lead = c.iter().position(|&x| x != 0.0).unwrap_or(c.len() - 1);
        c.drain(..lead);
        Poly { coeffs: c }
    }

    pub fn zero() -> Self {
        Poly { coeffs: vec![0.0] }
    }

    pub fn constant(k: f64) -> Self {
        Poly::new(vec![k])
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs == [0.0]
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Highest-degree-first coefficients.
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn leading(&self) -> f64 {
        self.coeffs[0]
    }

    /// Constant term, i.e. the value at s = 0.
    pub fn constant_term(&self) -> f64 {
        *self.coeffs.last().unwrap()
    }

    /// Horner evaluation at a complex point.
    pub fn eval(&self, s: Complex64) -> Complex64 {
        self.coeffs
            .iter()
            .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * s + c)
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        if self.is_zero() || other.is_zero() {
            return Poly::zero();
        }
        let mut out = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, &a) in self.coeffs.iter().enumerate() {
            for (j, &b) in other.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly::new(out)
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let n = self.coeffs.len().max(other.coeffs.len());
        let mut out = vec![0.0; n];
        for (i, &a) in self.coeffs.iter().rev().enumerate() {
            out[n - 1 - i] += a;
        }
        for (i, &b) in other.coeffs.iter().rev().enumerate() {
            out[n - 1 - i] += b;
        }
        Poly::new(out)
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, k: f64) -> Poly {
        Poly::new(self.coeffs.iter().map(|c| c * k).collect::<Vec<_>>())
    }

    /// The polynomial p(-s): odd-degree coefficients flip sign.
    pub fn flip_sign_variable(&self) -> Poly {
        let n = self.degree();
        let c: Vec<f64> = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, &a)| if (n - i) % 2 == 1 { -a } else { a })
            .collect();
        Poly::new(c)
    }

    /// Product of monic factors (tau_i * s + 1) for the given time constants.
    pub fn from_time_constants(taus: &[f64]) -> Poly {
        taus.iter()
            .fold(Poly::constant(1.0), |acc, &tau| acc.mul(&Poly::new(vec![tau, 1.0])))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn trims_leading_zeros() {
        let p = Poly::new(vec![0.0, 0.0, 2.0, 1.0]);
        assert_eq!(p.coeffs(), &[2.0, 1.0]);
        assert_eq!(p.degree(), 1);
    }

    #[test]
    fn zero_polynomial_collapses() {
        assert!(Poly::new(vec![0.0, 0.0]).is_zero());
        assert_eq!(Poly::zero().degree(), 0);
    }

    #[test]
    fn multiplication_matches_hand_expansion() {
        // (s + 1)^3 = s^3 + 3s^2 + 3s + 1
        let p = Poly::new(vec![1.0, 1.0]);
        let cube = p.mul(&p).mul(&p);
        assert_eq!(cube.coeffs(), &[1.0, 3.0, 3.0, 1.0]);
    }

    #[test]
    fn addition_aligns_degrees() {
        let a = Poly::new(vec![1.0, 0.0, 2.0]); // s^2 + 2
        let b = Poly::new(vec![3.0, 1.0]); // 3s + 1
        assert_eq!(a.add(&b).coeffs(), &[1.0, 3.0, 3.0]);
        // cancellation trims the result
        let c = Poly::new(vec![-1.0, 0.0, 0.0]);
        assert_eq!(a.add(&c).coeffs(), &[2.0]);
    }

    #[test]
    fn eval_complex_horner() {
        // (s+1)^3 at s = j: (1+j)^3 = -2 + 2j
        let p = Poly::new(vec![1.0, 3.0, 3.0, 1.0]);
        let v = p.eval(Complex64::new(0.0, 1.0));
        assert_relative_eq!(v.re, -2.0, epsilon = 1e-12);
        assert_relative_eq!(v.im, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn flip_sign_variable_negates_odd_terms() {
        // s^3 + 12s^2 + 60s + 120 -> -s^3 + 12s^2 - 60s + 120
        let p = Poly::new(vec![1.0, 12.0, 60.0, 120.0]);
        assert_eq!(p.flip_sign_variable().coeffs(), &[-1.0, 12.0, -60.0, 120.0]);
    }

    #[test]
    fn time_constant_factors() {
        // (s+1)(0.5s+1) = 0.5s^2 + 1.5s + 1
        let p = Poly::from_time_constants(&[1.0, 0.5]);
        assert_eq!(p.coeffs(), &[0.5, 1.5, 1.0]);
    }
}
