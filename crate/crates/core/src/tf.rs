//! Continuous-time SISO transfer functions with dead time.
//!
//! A [`DelayTF`] is a rational function `num(s)/den(s)` multiplied by
//! `e^{-L s}`. Plants, reduced-order templates, and controllers all share
//! this representation.

use crate::error::{Error, Result};
use crate::poly::Poly;
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct DelayTF {
    pub num: Poly,
    pub den: Poly,
    /// Dead time in seconds; nonnegative.
    pub delay_s: f64,
}

/// Serialized form: coefficient lists highest degree first.
#[derive(Serialize, Deserialize)]
struct DelayTFRepr {
    num: Vec<f64>,
    den: Vec<f64>,
    delay_s: f64,
}

impl Serialize for DelayTF {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        DelayTFRepr {
            num: self.num.coeffs().to_vec(),
            den: self.den.coeffs().to_vec(),
            delay_s: self.delay_s,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DelayTF {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = DelayTFRepr::deserialize(d)?;
        DelayTF::new(Poly::new(r.num), Poly::new(r.den), r.delay_s).map_err(serde::de::Error::custom)
    }
}

impl DelayTF {
    pub fn new(num: Poly, den: Poly, delay_s: f64) -> Result<Self> {
        if den.is_zero() {
            return Err(Error::invalid("denominator is the zero polynomial"));
        }
        if !delay_s.is_finite() || delay_s < 0.0 {
            return Err(Error::invalid(format!("dead time must be >= 0, got {delay_s}")));
        }
        Ok(DelayTF { num, den, delay_s })
    }

    /// Delay-free rational function from coefficient slices.
    pub fn rational(num: &[f64], den: &[f64]) -> Result<Self> {
        DelayTF::new(Poly::new(num.to_vec()), Poly::new(den.to_vec()), 0.0)
    }

    pub fn constant(k: f64) -> Self {
        DelayTF {
            num: Poly::constant(k),
            den: Poly::constant(1.0),
            delay_s: 0.0,
        }
    }

    pub fn is_proper(&self) -> bool {
        self.num.degree() <= self.den.degree()
    }

    pub fn is_strictly_proper(&self) -> bool {
        self.num.is_zero() || self.num.degree() < self.den.degree()
    }

    /// Value at s = 0 (requires a nonzero denominator constant term).
    pub fn dc_gain(&self) -> Result<f64> {
        let d = self.den.constant_term();
        if d == 0.0 {
            return Err(Error::Evaluation("pole at s = 0; dc gain undefined".into()));
        }
        Ok(self.num.constant_term() / d)
    }

    /// Frequency response `num(jw)/den(jw) * e^{-jwL}` at `omega` rad/s.
    pub fn freq_response(&self, omega: f64) -> Result<Complex64> {
        let s = Complex64::new(0.0, omega);
        let d = self.den.eval(s);
        if d.norm() == 0.0 {
            return Err(Error::Evaluation(format!("pole on the imaginary axis at omega = {omega}")));
        }
        let phase = Complex64::new(0.0, -omega * self.delay_s).exp();
        Ok(self.num.eval(s) / d * phase)
    }

    /// Series interconnection; dead times add.
    pub fn series(&self, other: &DelayTF) -> DelayTF {
        DelayTF {
            num: self.num.mul(&other.num),
            den: self.den.mul(&other.den),
            delay_s: self.delay_s + other.delay_s,
        }
    }

    /// Parallel sum over a common denominator. Only defined for equal dead
    /// times (the uses in this crate are all delay-free).
    pub fn parallel(&self, other: &DelayTF) -> Result<DelayTF> {
        if self.delay_s != other.delay_s {
            return Err(Error::invalid("parallel sum requires equal dead times"));
        }
        DelayTF::new(
            self.num.mul(&other.den).add(&other.num.mul(&self.den)),
            self.den.mul(&other.den),
            self.delay_s,
        )
    }

    /// Replaces `e^{-Ls}` by the third-order all-pass Pade filter and
    /// multiplies the polynomials out, leaving `delay_s = 0`.
    pub fn rationalize(&self) -> DelayTF {
        if self.delay_s == 0.0 {
            return self.clone();
        }
        let pade = pade3(self.delay_s).expect("delay_s >= 0 by construction");
        DelayTF {
            num: self.num.mul(&pade.num),
            den: self.den.mul(&pade.den),
            delay_s: 0.0,
        }
    }

    /// Denominator roots via companion-matrix eigenvalues.
    pub fn poles(&self) -> Result<Vec<Complex64>> {
        poly_roots(&self.den)
    }

    /// True iff every pole has real part below -1e-9. Dead time does not
    /// move poles, so it is ignored here.
    pub fn is_stable(&self) -> Result<bool> {
        Ok(self.poles()?.iter().all(|p| p.re < -1e-9))
    }
}

/// Roots of a nonzero polynomial via the companion matrix.
pub fn poly_roots(p: &Poly) -> Result<Vec<Complex64>> {
    if p.is_zero() {
        return Err(Error::invalid("zero polynomial has no defined roots"));
    }
    let n = p.degree();
    if n == 0 {
        return Ok(vec![]);
    }
    let lead = p.leading();
    let c = p.coeffs();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        m[(0, j)] = -c[j + 1] / lead;
    }
    for i in 1..n {
        m[(i, i - 1)] = 1.0;
    }
    Ok(m.complex_eigenvalues().iter().copied().collect())
}

/// Third-order Pade approximation of `e^{-Ls}`:
/// `D(s) = L^3 s^3 + 12 L^2 s^2 + 60 L s + 120`, `N(s) = D(-s)`.
/// All-pass by construction; exact identity for L = 0.
pub fn pade3(l: f64) -> Result<DelayTF> {
    if !(l.is_finite() && l >= 0.0) {
        return Err(Error::invalid(format!("dead time must be >= 0, got {l}")));
    }
    if l == 0.0 {
        return Ok(DelayTF::constant(1.0));
    }
    let den = Poly::new(vec![l.powi(3), 12.0 * l * l, 60.0 * l, 120.0]);
    let num = den.flip_sign_variable();
    DelayTF::new(num, den, 0.0)
}

/// Reduced-order model templates: first- or second-order plus dead time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateKind {
    Foptd,
    Soptd,
}

/// Parameters of a fitted low-order model. `tau_min` is unused for FOPTD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedModel {
    pub kind: TemplateKind,
    pub k: f64,
    pub tau_max: f64,
    pub tau_min: f64,
    pub l: f64,
}

impl ReducedModel {
    pub fn foptd(k: f64, tau: f64, l: f64) -> Result<Self> {
        let m = ReducedModel { kind: TemplateKind::Foptd, k, tau_max: tau, tau_min: 0.0, l };
        m.validate()?;
        Ok(m)
    }

    pub fn soptd(k: f64, tau_max: f64, tau_min: f64, l: f64) -> Result<Self> {
        let m = ReducedModel { kind: TemplateKind::Soptd, k, tau_max, tau_min, l };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0) {
            return Err(Error::invalid(format!("gain must be > 0, got {}", self.k)));
        }
        if !(self.l >= 0.0) {
            return Err(Error::invalid(format!("dead time must be >= 0, got {}", self.l)));
        }
        match self.kind {
            TemplateKind::Foptd => {
                if !(self.tau_max > 0.0) {
                    return Err(Error::invalid("FOPTD time constant must be > 0"));
                }
            }
            TemplateKind::Soptd => {
                if !(self.tau_min > 0.0 && self.tau_max >= self.tau_min) {
                    return Err(Error::invalid(format!(
                        "SOPTD requires tau_max >= tau_min > 0, got ({}, {})",
                        self.tau_max, self.tau_min
                    )));
                }
            }
        }
        Ok(())
    }

    /// The template as a transfer function:
    /// `K e^{-Ls} / (tau s + 1)` or `K e^{-Ls} / ((tau_max s + 1)(tau_min s + 1))`.
    pub fn to_tf(&self) -> DelayTF {
        let den = match self.kind {
            TemplateKind::Foptd => Poly::from_time_constants(&[self.tau_max]),
            TemplateKind::Soptd => Poly::from_time_constants(&[self.tau_max, self.tau_min]),
        };
        DelayTF {
            num: Poly::constant(self.k),
            den,
            delay_s: self.l,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn pade3_zero_delay_is_identity() {
        let p = pade3(0.0).unwrap();
        assert_eq!(p.num.coeffs(), &[1.0]);
        assert_eq!(p.den.coeffs(), &[1.0]);
    }

    #[test]
    fn pade3_unit_delay_coefficients() {
        let p = pade3(1.0).unwrap();
        assert_eq!(p.num.coeffs(), &[-1.0, 12.0, -60.0, 120.0]);
        assert_eq!(p.den.coeffs(), &[1.0, 12.0, 60.0, 120.0]);
    }

    #[test]
    fn pade3_negative_delay_rejected() {
        assert!(pade3(-0.1).is_err());
    }

    #[test]
    fn pade3_tracks_exact_delay_at_low_frequency() {
        // |N(jw)/D(jw) - e^{-jwL}| stays below 0.02 while wL <= 1
        for &l in &[0.2, 0.5, 1.0, 3.0] {
            let p = pade3(l).unwrap();
            let mut w = 1e-3;
            while w * l <= 1.0 {
                let exact = Complex64::new(0.0, -w * l).exp();
                let err = (p.freq_response(w).unwrap() - exact).norm();
                assert!(err < 0.02, "err {err} at w {w}, L {l}");
                w *= 1.3;
            }
        }
    }

    #[test]
    fn freq_response_third_order_pole_cluster() {
        // 1/(1+s)^3 at w = 1: 1/(1+j)^3 = -0.25 - 0.25j
        let p = DelayTF::rational(&[1.0], &[1.0, 3.0, 3.0, 1.0]).unwrap();
        let v = p.freq_response(1.0).unwrap();
        assert_relative_eq!(v.re, -0.25, epsilon = 1e-12);
        assert_relative_eq!(v.im, -0.25, epsilon = 1e-12);
    }

    #[test]
    fn freq_response_rhp_zero_plant() {
        // (1 - s)/(1+s)^3 at w = 1: (1-j)/(-2+2j) = -1/2
        let p = DelayTF::rational(&[-1.0, 1.0], &[1.0, 3.0, 3.0, 1.0]).unwrap();
        let v = p.freq_response(1.0).unwrap();
        assert_relative_eq!(v.re, -0.5, epsilon = 1e-12);
        assert_relative_eq!(v.im, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn rationalize_matches_exact_delay_at_low_frequency() {
        let m = ReducedModel::foptd(1.0, 1.0, 1.0).unwrap().to_tf();
        let r = m.rationalize();
        assert_eq!(r.delay_s, 0.0);
        assert_eq!(r.num.degree(), 3);
        assert_eq!(r.den.degree(), 4);
        assert_relative_eq!(r.dc_gain().unwrap(), 1.0, epsilon = 1e-12);
        let exact = m.freq_response(0.1).unwrap();
        let approx_v = r.freq_response(0.1).unwrap();
        assert!((exact - approx_v).norm() / exact.norm() < 1e-6);
    }

    #[test]
    fn stability_by_pole_sign() {
        assert!(DelayTF::rational(&[1.0], &[1.0, 1.0]).unwrap().is_stable().unwrap());
        assert!(!DelayTF::rational(&[1.0], &[1.0, -1.0]).unwrap().is_stable().unwrap());
    }

    #[test]
    fn soptd_ordering_enforced() {
        assert!(ReducedModel::soptd(1.0, 0.5, 1.0, 0.0).is_err());
        assert!(ReducedModel::soptd(1.0, 1.0, 0.5, 0.0).is_ok());
    }

    #[test]
    fn json_round_trip() {
        let m = ReducedModel::soptd(1.2, 2.0, 0.5, 0.3).unwrap().to_tf();
        let s = serde_json::to_string(&m).unwrap();
        assert!(s.contains("\"delay_s\":0.3"));
        let back: DelayTF = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
    }

    proptest! {
        #[test]
        fn pade3_is_all_pass(l in 0.01f64..10.0, w in 1e-4f64..1e4) {
            let p = pade3(l).unwrap();
            let mag = p.freq_response(w).unwrap().norm();
            prop_assert!((mag - 1.0).abs() < 1e-9);
        }

        #[test]
        fn conjugate_symmetry(w in 1e-4f64..1e3, l in 0.0f64..5.0) {
            let p = DelayTF::new(
                Poly::new(vec![0.5, 1.0]),
                Poly::new(vec![1.0, 2.0, 2.0]),
                l,
            ).unwrap();
            let plus = p.freq_response(w).unwrap();
            let minus = p.freq_response(-w).unwrap();
            prop_assert!((plus.conj() - minus).norm() < 1e-12 * (1.0 + plus.norm()));
        }
    }
}
