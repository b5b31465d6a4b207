//! Minimal SISO state-space support: companion realization, Lyapunov and
//! Sylvester solves, and H2 norms.
//!
//! The H2 norm of a stable strictly proper system is computed from its
//! controllability Gramian. For model-error norms the combined system is
//! block diagonal, so the norm splits into a plant term (fixed per plant),
//! a cross term, and a model term; `H2ErrorContext` caches the plant part
//! so candidate models only pay for the two small solves.

use crate::error::{Error, Result};
use crate::tf::DelayTF;
use nalgebra::{Complex, DMatrix, DVector, RowDVector};
use num_complex::Complex64;

#[derive(Debug, Clone)]
pub struct StateSpace {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: RowDVector<f64>,
    pub d: f64,
}

impl StateSpace {
    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn is_stable(&self) -> bool {
        if self.order() == 0 {
            return true;
        }
        self.a
            .complex_eigenvalues()
            .iter()
            .all(|l| l.re < -1e-9)
    }

    /// C (jwI - A)^{-1} B + d, by a complex linear solve.
    pub fn freq_response(&self, omega: f64) -> Result<Complex64> {
        let n = self.order();
        if n == 0 {
            return Ok(Complex64::new(self.d, 0.0));
        }
        let mut m = DMatrix::<Complex<f64>>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = Complex::new(-self.a[(i, j)], 0.0);
            }
            m[(i, i)] += Complex::new(0.0, omega);
        }
        let rhs = DVector::from_iterator(n, self.b.iter().map(|&v| Complex::new(v, 0.0)));
        let x = m
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::invalid("singular resolvent"))?;
        let mut acc = Complex::new(self.d, 0.0);
        for i in 0..n {
            acc += Complex::new(self.c[i], 0.0) * x[i];
        }
        Ok(Complex64::new(acc.re, acc.im))
    }
}

/// Controllable canonical realization of a proper rational transfer function.
/// The dead time must be zero; rationalize it away first.
pub fn tf_to_ss(tf: &DelayTF) -> Result<StateSpace> {
    if tf.delay_s != 0.0 {
        return Err(Error::invalid("realization requires zero dead time"));
    }
    if !tf.is_proper() {
        return Err(Error::invalid("realization requires a proper transfer function"));
    }
    let lead = tf.den.leading();
    let den: Vec<f64> = tf.den.coeffs().iter().map(|c| c / lead).collect();
    let mut num: Vec<f64> = tf.num.coeffs().iter().map(|c| c / lead).collect();
    let n = den.len() - 1;

    // Biproper part feeds through directly; the remainder is strictly proper.
    let mut d = 0.0;
    if num.len() == den.len() {
        d = num[0];
        for i in 0..den.len() {
            num[i] -= d * den[i];
        }
        num.remove(0);
    }

    if n == 0 {
        return Ok(StateSpace {
            a: DMatrix::zeros(0, 0),
            b: DVector::zeros(0),
            c: RowDVector::zeros(0),
            d,
        });
    }

    let mut a = DMatrix::zeros(n, n);
    for i in 0..n - 1 {
        a[(i, i + 1)] = 1.0;
    }
    for j in 0..n {
        // den = s^n + a_{n-1} s^{n-1} + ... + a_0; last row holds -a_j
        a[(n - 1, j)] = -den[n - j];
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let mut c = RowDVector::zeros(n);
    let offset = n - num.len();
    for (i, &v) in num.iter().enumerate() {
        // num = b_{m} s^{m} + ...; column k of C holds the s^k coefficient
        c[n - 1 - (offset + i)] = v;
    }
    Ok(StateSpace { a, b, c, d })
}

/// Solves A X + X B = -C by the Kronecker-product linear system.
/// A is m-by-m, B is n-by-n, C and X are m-by-n.
pub fn sylvester(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = a.nrows();
    let n = b.ncols();
    if a.ncols() != m || b.nrows() != n || c.nrows() != m || c.ncols() != n {
        return Err(Error::invalid("sylvester dimension mismatch"));
    }
    let mut big = DMatrix::zeros(m * n, m * n);
    // vec(AX) = (I (x) A) vec(X), vec(XB) = (B^T (x) I) vec(X), column-major
    for k in 0..n {
        for i in 0..m {
            for j in 0..m {
                big[(k * m + i, k * m + j)] += a[(i, j)];
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            let scale = b[(j, i)];
            if scale != 0.0 {
                for r in 0..m {
                    big[(i * m + r, j * m + r)] += scale;
                }
            }
        }
    }
    let rhs = DVector::from_iterator(m * n, c.iter().map(|&v| -v));
    let x = big
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::invalid("singular sylvester operator"))?;
    Ok(DMatrix::from_iterator(m, n, x.iter().copied()))
}

/// Solves the Lyapunov equation A P + P A^T = -Q.
pub fn lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    sylvester(a, &a.transpose(), q)
}

/// H2 norm of a stable strictly proper system via its controllability
/// Gramian: ||G||^2 = C P C^T with A P + P A^T + B B^T = 0.
pub fn h2_norm(ss: &StateSpace) -> Result<f64> {
    if ss.d != 0.0 {
        return Err(Error::invalid("H2 norm requires a strictly proper system"));
    }
    if ss.order() == 0 {
        return Ok(0.0);
    }
    if !ss.is_stable() {
        return Err(Error::Unstable("H2 norm of an unstable system".into()));
    }
    let q = &ss.b * ss.b.transpose();
    let p = lyapunov(&ss.a, &q)?;
    let val = (&ss.c * &p * ss.c.transpose())[(0, 0)];
    Ok(val.max(0.0).sqrt())
}

/// Independent H2 check: (1/pi) integral of |G(jw)|^2 over w >= 0,
/// trapezoid on a dense log grid plus the flat segment down to w = 0.
pub fn h2_norm_quadrature(tf: &DelayTF, points: usize) -> Result<f64> {
    let (lo, hi) = (1e-6_f64, 1e6_f64);
    let mut acc = 0.0;
    let mut prev_w = 0.0;
    let mut prev_f = tf.freq_response(0.0)?.norm_sqr();
    for i in 0..points {
        let w = lo * (hi / lo).powf(i as f64 / (points - 1) as f64);
        let f = tf.freq_response(w)?.norm_sqr();
        acc += 0.5 * (f + prev_f) * (w - prev_w);
        prev_w = w;
        prev_f = f;
    }
    Ok((acc / std::f64::consts::PI).sqrt())
}

/// Cached plant side of ||G_plant - G_model||_2.
///
/// The plant Gramian term is computed once; each candidate model costs one
/// small Sylvester solve (cross term) and one model-order Lyapunov solve.
pub struct H2ErrorContext {
    plant: StateSpace,
    plant_term: f64,
    /// P_cross right-hand side B_p B_q^T depends on the model, but A_p is
    /// shared; kept here so callers only hand over the model realization.
    plant_gramian: DMatrix<f64>,
}

impl H2ErrorContext {
    pub fn new(plant_rational: &DelayTF) -> Result<Self> {
        let plant = tf_to_ss(plant_rational)?;
        if plant.d != 0.0 {
            return Err(Error::invalid("error norm requires strictly proper systems"));
        }
        if !plant.is_stable() {
            return Err(Error::Unstable("plant must be stable for H2 error".into()));
        }
        let q = &plant.b * plant.b.transpose();
        let plant_gramian = lyapunov(&plant.a, &q)?;
        let plant_term = (&plant.c * &plant_gramian * plant.c.transpose())[(0, 0)];
        Ok(H2ErrorContext { plant, plant_term, plant_gramian })
    }

    pub fn plant_norm(&self) -> f64 {
        self.plant_term.max(0.0).sqrt()
    }

    /// ||G_plant - G_model||_2; errors if the model is unstable or biproper.
    pub fn error_norm(&self, model: &StateSpace) -> Result<f64> {
        if model.d != 0.0 {
            return Err(Error::invalid("error norm requires strictly proper systems"));
        }
        if !model.is_stable() {
            return Err(Error::Unstable("model must be stable for H2 error".into()));
        }
        let cross_rhs = &self.plant.b * model.b.transpose();
        let p_pq = sylvester(&self.plant.a, &model.a.transpose(), &cross_rhs)?;
        let q_model = &model.b * model.b.transpose();
        let p_qq = lyapunov(&model.a, &q_model)?;
        let cross = (&self.plant.c * &p_pq * model.c.transpose())[(0, 0)];
        let model_term = (&model.c * &p_qq * model.c.transpose())[(0, 0)];
        let sq = self.plant_term - 2.0 * cross + model_term;
        Ok(sq.max(0.0).sqrt())
    }

    pub fn plant_gramian(&self) -> &DMatrix<f64> {
        &self.plant_gramian
    }
}
