//! The higher-order test-bench plants and the reference SOPTD catalog.
//!
//! Four process classes, each swept over a fixed parameter list:
//!
//! * `P1`: `1/(1+s)^n` — repeated-pole chains, n in {3..8, 10, 20}
//! * `P2`: `1/((1+s)(1+as)(1+a^2 s)(1+a^3 s))` — geometrically spread poles
//! * `P3`: `1/((1+s)(1+Ts)^2)` — a double pole swept from fast to slow
//! * `P4`: `(1-as)/(1+s)^3` — right-half-plane zero of varying strength
//!
//! Every entry has unit dc gain and no dead time. The reference catalog
//! stores, for each entry, a near-optimal SOPTD fit and its frequency-plane
//! objective value; tests use it as a deterministic oracle, and the tuning
//! pipeline reads its parameters as rule features.

use crate::error::{Error, Result};
use crate::poly::Poly;
use crate::tf::{DelayTF, ReducedModel};
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProcessClass {
    P1,
    P2,
    P3,
    P4,
}

impl fmt::Display for ProcessClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProcessClass::P1 => "P1",
            ProcessClass::P2 => "P2",
            ProcessClass::P3 => "P3",
            ProcessClass::P4 => "P4",
        })
    }
}

impl std::str::FromStr for ProcessClass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "P1" => Ok(ProcessClass::P1),
            "P2" => Ok(ProcessClass::P2),
            "P3" => Ok(ProcessClass::P3),
            "P4" => Ok(ProcessClass::P4),
            other => Err(Error::invalid(format!("unknown process class '{other}'"))),
        }
    }
}

/// One test-bench plant: a class plus its sweep parameter
/// (n for P1, a for P2/P4, T for P3).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    pub class: ProcessClass,
    pub parameter: f64,
}

impl fmt::Display for BenchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.class, self.parameter)
    }
}

impl std::str::FromStr for BenchSpec {
    type Err = Error;
    /// Parses "P1:3" / "P2:0.5" style identifiers.
    fn from_str(s: &str) -> Result<Self> {
        let (class, param) = s
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("expected CLASS:PARAM, got '{s}'")))?;
        let class: ProcessClass = class.parse()?;
        let parameter: f64 = param
            .parse()
            .map_err(|_| Error::invalid(format!("bad parameter '{param}'")))?;
        Ok(BenchSpec { class, parameter })
    }
}

const P1_PARAMS: [f64; 8] = [3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 10.0, 20.0];
const P2_PARAMS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
const P3_PARAMS: [f64; 10] = [0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 2.0, 5.0, 10.0];
const P4_PARAMS: [f64; 11] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1];

/// All 38 catalog entries in class order.
pub fn catalog() -> Vec<BenchSpec> {
    let mut out = Vec::with_capacity(38);
    for p in P1_PARAMS {
        out.push(BenchSpec { class: ProcessClass::P1, parameter: p });
    }
    for p in P2_PARAMS {
        out.push(BenchSpec { class: ProcessClass::P2, parameter: p });
    }
    for p in P3_PARAMS {
        out.push(BenchSpec { class: ProcessClass::P3, parameter: p });
    }
    for p in P4_PARAMS {
        out.push(BenchSpec { class: ProcessClass::P4, parameter: p });
    }
    out
}

impl BenchSpec {
    /// Whether the parameter is one of the catalog sweep values.
    pub fn in_catalog(&self) -> bool {
        let list: &[f64] = match self.class {
            ProcessClass::P1 => &P1_PARAMS,
            ProcessClass::P2 => &P2_PARAMS,
            ProcessClass::P3 => &P3_PARAMS,
            ProcessClass::P4 => &P4_PARAMS,
        };
        list.iter().any(|&p| (p - self.parameter).abs() < 1e-12)
    }
}

/// Builds the plant transfer function in expanded polynomial form.
/// All classes are delay-free with unit dc gain.
pub fn make_testbench(spec: BenchSpec) -> Result<DelayTF> {
    let p = spec.parameter;
    match spec.class {
        ProcessClass::P1 => {
            if p.fract() != 0.0 || p < 1.0 {
                return Err(Error::invalid(format!("P1 exponent must be a positive integer, got {p}")));
            }
            let n = p as usize;
            let mut den = Poly::constant(1.0);
            let factor = Poly::new(vec![1.0, 1.0]);
            for _ in 0..n {
                den = den.mul(&factor);
            }
            DelayTF::new(Poly::constant(1.0), den, 0.0)
        }
        ProcessClass::P2 => {
            if !(p > 0.0) {
                return Err(Error::invalid(format!("P2 spread must be > 0, got {p}")));
            }
            let den = Poly::from_time_constants(&[1.0, p, p * p, p * p * p]);
            DelayTF::new(Poly::constant(1.0), den, 0.0)
        }
        ProcessClass::P3 => {
            if !(p > 0.0) {
                return Err(Error::invalid(format!("P3 time constant must be > 0, got {p}")));
            }
            let den = Poly::from_time_constants(&[1.0, p, p]);
            DelayTF::new(Poly::constant(1.0), den, 0.0)
        }
        ProcessClass::P4 => {
            if !(p > 0.0) {
                return Err(Error::invalid(format!("P4 zero strength must be > 0, got {p}")));
            }
            let den = Poly::from_time_constants(&[1.0, 1.0, 1.0]);
            DelayTF::new(Poly::new(vec![-p, 1.0]), den, 0.0)
        }
    }
}

/// Largest plant time constant (1/|Re| over the poles); used for default
/// simulation horizons.
pub fn dominant_time_constant(plant: &DelayTF) -> Result<f64> {
    let poles = plant.poles()?;
    poles
        .iter()
        .map(|p| 1.0 / p.re.abs().max(1e-12))
        .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.max(t))))
        .ok_or_else(|| Error::invalid("static system has no time constant"))
}

/// A catalog entry's reference SOPTD fit and objective value.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ReferenceFit {
    pub spec: BenchSpec,
    /// Frequency-plane objective value of the fit (length norm, unit weights).
    pub j_ref: f64,
    pub model: ReducedModel,
}

/// Reference SOPTD fits for all 38 catalog entries, in catalog order.
/// Each row: (class, parameter, J, K, tau_max, tau_min, L).
pub fn reference_fits() -> Vec<ReferenceFit> {
    const ROWS: [(ProcessClass, f64, f64, f64, f64, f64, f64); 38] = [
        (ProcessClass::P1, 3.0, 0.35763, 1.0, 1.335035, 1.296596, 0.458524),
        (ProcessClass::P1, 4.0, 0.534457, 1.0, 1.586542, 1.548473, 1.03317),
        (ProcessClass::P1, 5.0, 0.643986, 1.0, 1.797635, 1.770904, 1.666146),
        (ProcessClass::P1, 6.0, 0.720594, 1.0, 1.989875, 1.959647, 2.344943),
        (ProcessClass::P1, 7.0, 0.779376, 1.0, 2.163055, 2.14323, 3.051016),
        (ProcessClass::P1, 8.0, 0.82832, 1.0, 2.310304, 2.310215, 3.782639),
        (ProcessClass::P1, 10.0, 0.91604, 1.0, 2.661457, 2.549809, 5.293009),
        (ProcessClass::P1, 20.0, 2.504335, 1.0, 5.451683, 5.397813, 9.999728),
        (ProcessClass::P2, 0.1, 0.004308, 1.0, 0.999772, 0.100915, 0.010279),
        (ProcessClass::P2, 0.2, 0.028107, 1.0, 0.992451, 0.214076, 0.038794),
        (ProcessClass::P2, 0.3, 0.060572, 1.0, 0.979505, 0.341498, 0.092874),
        (ProcessClass::P2, 0.4, 0.107937, 1.0, 0.943464, 0.51063, 0.167586),
        (ProcessClass::P2, 0.5, 0.173435, 1.0, 0.833884, 0.778235, 0.270018),
        (ProcessClass::P2, 0.6, 0.292888, 1.0, 0.919789, 0.886179, 0.409777),
        (ProcessClass::P2, 0.7, 0.400586, 1.0, 1.026115, 1.021073, 0.559864),
        (ProcessClass::P2, 0.8, 0.480812, 1.0, 1.233382, 1.10547, 0.720248),
        (ProcessClass::P2, 0.9, 0.521566, 1.0, 1.371358, 1.331686, 0.879882),
        (ProcessClass::P3, 0.005, 0.003451, 1.0, 1.000027, 0.007301, 0.00276),
        (ProcessClass::P3, 0.01, 0.006693, 1.0, 0.999721, 0.014931, 0.005228),
        (ProcessClass::P3, 0.02, 0.013254, 1.0, 0.999557, 0.030272, 0.010203),
        (ProcessClass::P3, 0.05, 0.031173, 1.0, 0.997605, 0.075538, 0.026398),
        (ProcessClass::P3, 0.1, 0.05823, 1.0, 0.989257, 0.157307, 0.050227),
        (ProcessClass::P3, 0.2, 0.100513, 1.0, 0.963887, 0.337572, 0.09348),
        (ProcessClass::P3, 0.5, 0.243507, 1.0, 0.911085, 0.868222, 0.253221),
        (ProcessClass::P3, 2.0, 0.274858, 1.0, 2.285902, 2.162089, 0.662506),
        (ProcessClass::P3, 5.0, 0.105979, 1.0, 5.271248, 4.954549, 0.85439),
        (ProcessClass::P3, 10.0, 0.048469, 1.0, 9.999702, 9.998882, 0.98878),
        (ProcessClass::P4, 0.1, 0.350007, 1.0, 1.321307, 1.304839, 0.562264),
        (ProcessClass::P4, 0.2, 0.334032, 1.0, 1.317905, 1.293675, 0.66746),
        (ProcessClass::P4, 0.3, 0.332085, 1.0, 1.393695, 1.197571, 0.773718),
        (ProcessClass::P4, 0.4, 0.351824, 1.0, 1.334063, 1.234247, 0.873208),
        (ProcessClass::P4, 0.5, 0.423653, 1.0, 1.298311, 1.242496, 0.968798),
        (ProcessClass::P4, 0.6, 0.542731, 1.0, 1.25362, 1.252805, 1.064005),
        (ProcessClass::P4, 0.7, 0.698068, 1.0, 1.241163, 1.240979, 1.150465),
        (ProcessClass::P4, 0.8, 0.881815, 1.0, 1.293128, 1.161037, 1.234179),
        (ProcessClass::P4, 0.9, 1.085803, 1.0, 1.28306, 1.138877, 1.308246),
        (ProcessClass::P4, 1.0, 1.307159, 1.0, 1.298524, 1.09749, 1.387555),
        (ProcessClass::P4, 1.1, 1.542905, 1.0, 1.312971, 1.053957, 1.459166),
    ];
    ROWS.iter()
        .map(|&(class, parameter, j_ref, k, tau_max, tau_min, l)| ReferenceFit {
            spec: BenchSpec { class, parameter },
            j_ref,
            model: ReducedModel::soptd(k, tau_max, tau_min, l)
                .expect("reference rows satisfy tau_max >= tau_min > 0"),
        })
        .collect()
}

/// Looks up a catalog entry's reference fit.
pub fn reference_fit(spec: BenchSpec) -> Option<ReferenceFit> {
    reference_fits()
        .into_iter()
        .find(|r| r.spec.class == spec.class && (r.spec.parameter - spec.parameter).abs() < 1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn catalog_has_all_class_counts() {
        let all = catalog();
        assert_eq!(all.len(), 38);
        let count =
            |c: ProcessClass| all.iter().filter(|s| s.class == c).count();
        assert_eq!(count(ProcessClass::P1), 8);
        assert_eq!(count(ProcessClass::P2), 9);
        assert_eq!(count(ProcessClass::P3), 10);
        assert_eq!(count(ProcessClass::P4), 11);
    }

    #[test]
    fn p1_cubic_expansion() {
        let p = make_testbench("P1:3".parse().unwrap()).unwrap();
        assert_eq!(p.den.coeffs(), &[1.0, 3.0, 3.0, 1.0]);
        assert_eq!(p.num.coeffs(), &[1.0]);
    }

    #[test]
    fn p2_pole_locations() {
        // a = 0.5: factors (1+s)(1+0.5s)(1+0.25s)(1+0.125s), poles -1,-2,-4,-8
        let p = make_testbench("P2:0.5".parse().unwrap()).unwrap();
        let mut re: Vec<f64> = p.poles().unwrap().iter().map(|z| z.re).collect();
        re.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expect = [-8.0, -4.0, -2.0, -1.0];
        for (got, want) in re.iter().zip(expect) {
            assert_relative_eq!(got, &want, epsilon = 1e-9);
        }
    }

    #[test]
    fn p4_has_rhp_zero() {
        let p = make_testbench("P4:1.1".parse().unwrap()).unwrap();
        // numerator 1 - 1.1 s vanishes at s = 1/1.1
        let root = crate::tf::poly_roots(&p.num).unwrap();
        assert_eq!(root.len(), 1);
        assert_relative_eq!(root[0].re, 1.0 / 1.1, epsilon = 1e-12);
    }

    #[test]
    fn p1_rejects_non_integer_exponent() {
        assert!(make_testbench("P1:2.5".parse().unwrap()).is_err());
    }

    #[test]
    fn all_entries_unit_dc_gain_and_stable() {
        for spec in catalog() {
            let p = make_testbench(spec).unwrap();
            assert_relative_eq!(p.dc_gain().unwrap(), 1.0, epsilon = 1e-12);
            assert!(p.is_stable().unwrap(), "{spec} should be stable");
        }
    }

    #[test]
    fn p1_n20_is_stable() {
        let p = make_testbench("P1:20".parse().unwrap()).unwrap();
        assert!(p.is_stable().unwrap());
    }

    #[test]
    fn reference_rows_align_with_catalog() {
        let fits = reference_fits();
        assert_eq!(fits.len(), 38);
        for (fit, spec) in fits.iter().zip(catalog()) {
            assert_eq!(fit.spec.class, spec.class);
            assert_relative_eq!(fit.spec.parameter, spec.parameter);
            assert!(fit.model.tau_max >= fit.model.tau_min);
            assert!(fit.j_ref > 0.0);
        }
    }

    #[test]
    fn dominant_time_constant_of_p3() {
        let p = make_testbench("P3:10".parse().unwrap()).unwrap();
        assert_relative_eq!(dominant_time_constant(&p).unwrap(), 10.0, epsilon = 1e-6);
    }
}
