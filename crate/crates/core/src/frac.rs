//! Rational approximation of fractional powers of s and assembly of
//! integer/fractional-order controller transfer functions.
//!
//! `s^a` is approximated over a frequency band by a chain of first-order
//! zero/pole cells whose corner frequencies are recursively spaced across
//! the band. Exponents beyond (-1, 1) are split into an exact integer power
//! times a banded remainder, so `s^1.5` shares its fractional cells with
//! `s^0.5` and exponents of exactly 1 or 2 stay exact.

use crate::error::{Error, Result};
use crate::poly::Poly;
use crate::tf::DelayTF;
use serde::{Deserialize, Serialize};

/// Band and order of the zero/pole chain approximating a fractional power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FracApproxConfig {
    pub w_low: f64,
    pub w_high: f64,
    /// Number of zero/pole cells.
    pub cells: usize,
}

impl Default for FracApproxConfig {
    fn default() -> Self {
        FracApproxConfig { w_low: 1e-2, w_high: 1e2, cells: 5 }
    }
}

impl FracApproxConfig {
    fn validate(&self) -> Result<()> {
        if !(self.w_low > 0.0 && self.w_high > self.w_low) {
            return Err(Error::invalid("band must satisfy 0 < w_low < w_high"));
        }
        if self.cells == 0 {
            return Err(Error::invalid("need at least one approximation cell"));
        }
        Ok(())
    }

    /// Derivative filter time constant: pole two decades above the band.
    pub fn derivative_filter_tc(&self) -> f64 {
        1.0 / (100.0 * self.w_high)
    }
}

fn monomial(n: usize) -> Poly {
    let mut c = vec![0.0; n + 1];
    c[0] = 1.0;
    Poly::new(c)
}

/// Zero/pole chain for s^r with r strictly inside (-1, 1).
fn banded_cells(r: f64, cfg: &FracApproxConfig) -> (Poly, Poly) {
    let n = cfg.cells as f64;
    let wu = (cfg.w_high / cfg.w_low).sqrt();
    let mut num = Poly::constant(cfg.w_high.powf(r));
    let mut den = Poly::constant(1.0);
    for k in 1..=cfg.cells {
        let k = k as f64;
        let zero = cfg.w_low * wu.powf((2.0 * k - 1.0 - r) / n);
        let pole = cfg.w_low * wu.powf((2.0 * k - 1.0 + r) / n);
        num = num.mul(&Poly::new(vec![1.0, zero]));
        den = den.mul(&Poly::new(vec![1.0, pole]));
    }
    (num, den)
}

/// Rational approximation of s^alpha, |alpha| <= 2. Integer exponents are
/// exact; otherwise the integer part is exact and the fractional remainder
/// is approximated over the configured band.
pub fn fractional_power(alpha: f64, cfg: &FracApproxConfig) -> Result<DelayTF> {
    cfg.validate()?;
    if !alpha.is_finite() {
        return Err(Error::invalid("exponent must be finite"));
    }
    if alpha.abs() > 2.0 {
        return Err(Error::invalid(format!("exponent {alpha} outside [-2, 2]")));
    }
    let int_part = alpha.trunc();
    let remainder = alpha - int_part;

    let (mut num, mut den) = if remainder == 0.0 {
        (Poly::constant(1.0), Poly::constant(1.0))
    } else {
        banded_cells(remainder, cfg)
    };
    if int_part > 0.0 {
        num = num.mul(&monomial(int_part as usize));
    } else if int_part < 0.0 {
        den = den.mul(&monomial((-int_part) as usize));
    }
    DelayTF::new(num, den, 0.0)
}

/// Parallel-form controller gains and exponents: the control law is
/// u = kp e + ki (fractional integral of e) + kd (filtered fractional
/// derivative). Integer behavior is the special case lam = mu = 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerParams {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Integral exponent (order of 1/s^lam).
    pub lam: f64,
    /// Derivative exponent (order of s^mu).
    pub mu: f64,
}

impl ControllerParams {
    pub fn pid(kp: f64, ki: f64, kd: f64) -> Self {
        ControllerParams { kp, ki, kd, lam: 1.0, mu: 1.0 }
    }

    pub fn is_integer_order(&self) -> bool {
        self.lam == 1.0 && self.mu == 1.0
    }

    /// Realizability check, separate from construction so that raw rule
    /// outputs can be inspected before being accepted.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("kp", self.kp), ("ki", self.ki), ("kd", self.kd)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        for (name, v) in [("lam", self.lam), ("mu", self.mu)] {
            if !v.is_finite() || !(0.0 < v && v <= 2.0) {
                return Err(Error::invalid(format!("{name} must lie in (0, 2], got {v}")));
            }
        }
        Ok(())
    }
}

/// ki / s^lam as a rational block.
pub fn integral_branch(ki: f64, lam: f64, cfg: &FracApproxConfig) -> Result<DelayTF> {
    let base = fractional_power(-lam, cfg)?;
    DelayTF::new(base.num.scale(ki), base.den, 0.0)
}

/// kd s^mu with a first-order filter pole two decades above the band, one
/// pole per integer step of mu so the block stays proper for mu up to 2.
pub fn derivative_branch(kd: f64, mu: f64, cfg: &FracApproxConfig) -> Result<DelayTF> {
    if !(mu > 0.0) {
        return Err(Error::invalid("derivative exponent must be positive"));
    }
    let base = fractional_power(mu, cfg)?;
    let tf = cfg.derivative_filter_tc();
    let filter = Poly::from_time_constants(&vec![tf; mu.ceil() as usize]);
    DelayTF::new(base.num.scale(kd), base.den.mul(&filter), 0.0)
}

/// Full parallel-form controller transfer function
/// C(s) = kp + ki/s^lam + kd s^mu F(s); zero gains drop their branch.
pub fn controller_tf(p: &ControllerParams, cfg: &FracApproxConfig) -> Result<DelayTF> {
    p.validate()?;
    let mut c = DelayTF::constant(p.kp);
    if p.ki != 0.0 {
        c = c.parallel(&integral_branch(p.ki, p.lam, cfg)?)?;
    }
    if p.kd != 0.0 {
        c = c.parallel(&derivative_branch(p.kd, p.mu, cfg)?)?;
    }
    Ok(c)
}
