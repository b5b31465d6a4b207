//! Closed-loop step-response simulation and the time-domain tuning cost.
//!
//! The loop is assembled as one linear state-space system: plant states,
//! an integral-plus-proportional branch driven by the error, and a filtered
//! derivative branch driven by the measurement (so a setpoint step produces
//! no derivative kick). Dead time enters as a sample-aligned ring buffer on
//! the plant input.
//!
//! Integration uses the RK4 one-step map in precomputed affine form
//! x+ = M x + S v, with the step split into substeps until |h A| is small;
//! the maps compose by binary doubling, so stiffness costs log(substeps)
//! matrix products once per simulation rather than work per sample. The map
//! preserves equilibria exactly: M x* + S v = x* whenever A x* + B v = 0,
//! because S is built from the same truncated series as M.

use crate::error::{Error, Result};
use crate::frac::{self, ControllerParams, FracApproxConfig};
use crate::ss::{tf_to_ss, StateSpace};
use crate::tf::DelayTF;
use crate::PENALTY_COST;
use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

/// Signals beyond this magnitude classify the loop as diverged.
pub const DIVERGENCE_BOUND: f64 = 1e6;

/// Substep target for |h A| under the infinity norm.
const STEP_NORM_CAP: f64 = 1.5;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub y: Vec<f64>,
    /// Control signal for closed-loop runs; the applied input for open-loop
    /// step responses.
    pub u: Vec<f64>,
}

impl Trajectory {
    pub fn final_error(&self, setpoint: f64) -> f64 {
        setpoint - *self.y.last().expect("trajectory is never empty")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    /// Weight on the time-multiplied absolute error term.
    pub w_itae: f64,
    /// Weight on the squared control term.
    pub w_isco: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights { w_itae: 1.0, w_isco: 1.0 }
    }
}

/// Trapezoid integral of w1 t |r - y| + w2 u^2 over the trajectory.
pub fn cost_j(traj: &Trajectory, weights: &CostWeights, setpoint: f64) -> f64 {
    let f = |k: usize| {
        let e = (setpoint - traj.y[k]).abs();
        weights.w_itae * traj.t[k] * e + weights.w_isco * traj.u[k] * traj.u[k]
    };
    let mut acc = 0.0;
    for k in 1..traj.t.len() {
        acc += 0.5 * (f(k) + f(k - 1)) * (traj.t[k] - traj.t[k - 1]);
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizon: f64,
    pub steps: usize,
}

impl SimConfig {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || steps < 2 {
            return Err(Error::invalid("horizon must be positive and steps at least 2"));
        }
        Ok(SimConfig { horizon, steps })
    }

    /// Standard resolution for a given horizon.
    pub fn with_horizon(horizon: f64) -> Result<Self> {
        Self::new(horizon, 20_000)
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }
}

/// Horizon long enough for both the dead time and the slowest pole to
/// settle, with a floor for fast plants.
pub fn default_horizon(delay: f64, tau_dominant: f64) -> f64 {
    (20.0 * (delay + tau_dominant)).max(50.0)
}

/// One-step affine update x+ = m x + s v for a fixed step length, built by
/// substepping the RK4 polynomial and composing with binary doubling.
struct AffineMap {
    m: DMatrix<f64>,
    s: DMatrix<f64>,
}

fn rk4_map(a: &DMatrix<f64>, b: &DMatrix<f64>, dt: f64) -> AffineMap {
    let n = a.nrows();
    let norm = a
        .row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0f64, f64::max);
    let n_sub = ((dt * norm / STEP_NORM_CAP).ceil() as usize).max(1);
    let h = dt / n_sub as f64;

    let eye = DMatrix::identity(n, n);
    let ha = a * h;
    let ha2 = &ha * &ha;
    let ha3 = &ha2 * &ha;
    let ha4 = &ha3 * &ha;
    let mut m = &eye + &ha + &ha2 / 2.0 + &ha3 / 6.0 + &ha4 / 24.0;
    let mut s = (&eye + &ha / 2.0 + &ha2 / 6.0 + &ha3 / 24.0) * b * h;

    let mut m_total = eye;
    let mut s_total = DMatrix::zeros(n, b.ncols());
    let mut k = n_sub;
    while k > 0 {
        if k & 1 == 1 {
            s_total = &m * &s_total + &s;
            m_total = &m * &m_total;
        }
        s = &m * &s + &s;
        m = &m * &m;
        k >>= 1;
    }
    AffineMap { m: m_total, s: s_total }
}

/// Osborne balancing with power-of-two scale factors: reduces the norm of A
/// by an exact diagonal similarity, which keeps the substep count tied to
/// the dynamics instead of to the coordinate choice. Returns the per-state
/// scales t with A' = T^{-1} A T.
fn balance(a: &mut DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut scale = vec![1.0; n];
    for _ in 0..32 {
        let mut converged = true;
        for i in 0..n {
            let c: f64 = (0..n).filter(|&j| j != i).map(|j| a[(j, i)].abs()).sum();
            let r: f64 = (0..n).filter(|&j| j != i).map(|j| a[(i, j)].abs()).sum();
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let f = 2f64
                .powi((r / c).sqrt().log2().round() as i32)
                .clamp(2f64.powi(-64), 2f64.powi(64));
            if c * f + r / f < 0.95 * (c + r) {
                for j in 0..n {
                    a[(j, i)] *= f;
                }
                for j in 0..n {
                    a[(i, j)] /= f;
                }
                scale[i] *= f;
                converged = false;
            }
        }
        if converged {
            break;
        }
    }
    scale
}

struct LoopSim {
    a: DMatrix<f64>,
    b_r: DVector<f64>,
    /// Input column for the buffered plant input; None when delay-free.
    b_ud: Option<DVector<f64>>,
    y_x: DVector<f64>,
    y_r: f64,
    y_ud: f64,
    u_x: DVector<f64>,
    u_r: f64,
    u_ud: f64,
    /// Ring-buffer length in samples; 0 means the input applies directly.
    delay_samples: usize,
}

fn pi_branch(p: &ControllerParams, cfg: &FracApproxConfig) -> Result<StateSpace> {
    let mut tf = DelayTF::constant(p.kp);
    if p.ki != 0.0 {
        tf = tf.parallel(&frac::integral_branch(p.ki, p.lam, cfg)?)?;
    }
    tf_to_ss(&tf)
}

fn d_branch(p: &ControllerParams, cfg: &FracApproxConfig) -> Result<StateSpace> {
    if p.kd == 0.0 {
        return Ok(StateSpace {
            a: DMatrix::zeros(0, 0),
            b: DVector::zeros(0),
            c: RowDVector::zeros(0),
            d: 0.0,
        });
    }
    tf_to_ss(&frac::derivative_branch(p.kd, p.mu, cfg)?)
}

fn build_loop(
    plant: &DelayTF,
    params: &ControllerParams,
    cfg: &FracApproxConfig,
    dt: f64,
) -> Result<LoopSim> {
    params.validate()?;
    let rational = DelayTF::new(plant.num.clone(), plant.den.clone(), 0.0)?;
    let p = tf_to_ss(&rational)?;
    let pi = pi_branch(params, cfg)?;
    let d = d_branch(params, cfg)?;

    let (np, nc, nd) = (p.order(), pi.order(), d.order());
    let n = np + nc + nd;
    let (ip, ic, id) = (0, np, np + nc);

    // before resolving y: u = u_x0 x + u_r0 r + u_y y
    let mut u_x0 = DVector::zeros(n);
    for j in 0..nc {
        u_x0[ic + j] = pi.c[j];
    }
    for j in 0..nd {
        u_x0[id + j] = -d.c[j];
    }
    let u_r0 = pi.d;
    let u_y = -(pi.d + d.d);

    let mut a = DMatrix::zeros(n, n);
    a.view_mut((ip, ip), (np, np)).copy_from(&p.a);
    a.view_mut((ic, ic), (nc, nc)).copy_from(&pi.a);
    a.view_mut((id, id), (nd, nd)).copy_from(&d.a);

    // plant output row over the stacked state, before any feedthrough
    let mut cp_row = DVector::zeros(n);
    for j in 0..np {
        cp_row[ip + j] = p.c[j];
    }

    let delay_samples = (plant.delay_s / dt).round() as usize;
    if plant.delay_s > 0.0 && delay_samples >= 1 {
        // buffered input: no algebraic loop; y = cp x + Dp ud
        let y_ud = p.d;
        for i in 0..nc {
            for j in 0..n {
                a[(ic + i, j)] -= pi.b[i] * cp_row[j];
            }
        }
        for i in 0..nd {
            for j in 0..n {
                a[(id + i, j)] += d.b[i] * cp_row[j];
            }
        }
        let mut b_ud = DVector::zeros(n);
        for i in 0..np {
            b_ud[ip + i] = p.b[i];
        }
        for i in 0..nc {
            b_ud[ic + i] = -pi.b[i] * y_ud;
        }
        for i in 0..nd {
            b_ud[id + i] = d.b[i] * y_ud;
        }
        let mut b_r = DVector::zeros(n);
        for i in 0..nc {
            b_r[ic + i] = pi.b[i];
        }
        // fold the measurement feedthrough into the recorded u row
        let mut u_x = u_x0;
        for j in 0..n {
            u_x[j] += u_y * cp_row[j];
        }
        Ok(LoopSim {
            a,
            b_r,
            b_ud: Some(b_ud),
            y_x: cp_row,
            y_r: 0.0,
            y_ud,
            u_x,
            u_r: u_r0,
            u_ud: u_y * y_ud,
            delay_samples,
        })
    } else {
        // delay-free (or below grid resolution): resolve the algebraic loop
        // u = base + u_y (cp x + Dp u)
        let gamma = 1.0 / (1.0 - u_y * p.d);
        if !gamma.is_finite() {
            return Err(Error::Evaluation("singular algebraic loop".into()));
        }
        let mut u_x = DVector::zeros(n);
        for j in 0..n {
            u_x[j] = gamma * (u_x0[j] + u_y * cp_row[j]);
        }
        let u_r = gamma * u_r0;
        let mut y_x = cp_row.clone();
        for j in 0..n {
            y_x[j] += p.d * u_x[j];
        }
        let y_r = p.d * u_r;

        for i in 0..np {
            for j in 0..n {
                a[(ip + i, j)] += p.b[i] * u_x[j];
            }
        }
        for i in 0..nc {
            for j in 0..n {
                a[(ic + i, j)] -= pi.b[i] * y_x[j];
            }
        }
        for i in 0..nd {
            for j in 0..n {
                a[(id + i, j)] += d.b[i] * y_x[j];
            }
        }
        let mut b_r = DVector::zeros(n);
        for i in 0..np {
            b_r[ip + i] = p.b[i] * u_r;
        }
        for i in 0..nc {
            b_r[ic + i] = pi.b[i] * (1.0 - y_r);
        }
        for i in 0..nd {
            b_r[id + i] = d.b[i] * y_r;
        }
        Ok(LoopSim {
            a,
            b_r,
            b_ud: None,
            y_x,
            y_r,
            y_ud: 0.0,
            u_x,
            u_r,
            u_ud: 0.0,
            delay_samples: 0,
        })
    }
}

impl LoopSim {
    fn balanced(mut self) -> Self {
        let scale = balance(&mut self.a);
        for (i, &t) in scale.iter().enumerate() {
            self.b_r[i] /= t;
            if let Some(b) = self.b_ud.as_mut() {
                b[i] /= t;
            }
            self.y_x[i] *= t;
            self.u_x[i] *= t;
        }
        self
    }
}

/// Simulates the closed loop's response to a setpoint step of the given
/// height applied at t = 0, with the plant initially at rest.
pub fn simulate_step(
    plant: &DelayTF,
    params: &ControllerParams,
    cfg: &FracApproxConfig,
    sim: &SimConfig,
    setpoint: f64,
) -> Result<Trajectory> {
    let dt = sim.dt();
    let lp = build_loop(plant, params, cfg, dt)?.balanced();
    let n = lp.a.nrows();

    let b = match &lp.b_ud {
        Some(b_ud) => {
            let mut b = DMatrix::zeros(n, 2);
            b.set_column(0, b_ud);
            b.set_column(1, &lp.b_r);
            b
        }
        None => DMatrix::from_column_slice(n, 1, lp.b_r.as_slice()),
    };
    let map = rk4_map(&lp.a, &b, dt);
    let s_ud: Option<DVector<f64>> = lp.b_ud.as_ref().map(|_| map.s.column(0).clone_owned());
    let s_r: DVector<f64> = map.s.column(map.s.ncols() - 1).clone_owned();

    let steps = sim.steps;
    let mut t = Vec::with_capacity(steps + 1);
    let mut y = Vec::with_capacity(steps + 1);
    let mut u = Vec::with_capacity(steps + 1);

    let mut x: DVector<f64> = DVector::zeros(n);
    let mut x_next: DVector<f64> = DVector::zeros(n);
    let mut u_hist: Vec<f64> = Vec::new();
    let m_delay = lp.delay_samples;

    for k in 0..=steps {
        let ud = if m_delay > 0 && k >= m_delay { u_hist[k - m_delay] } else { 0.0 };
        let yk = lp.y_x.dot(&x) + lp.y_r * setpoint + lp.y_ud * ud;
        let uk = lp.u_x.dot(&x) + lp.u_r * setpoint + lp.u_ud * ud;
        if !(yk.is_finite() && uk.is_finite()) || yk.abs() > DIVERGENCE_BOUND || uk.abs() > DIVERGENCE_BOUND {
            return Err(Error::Unstable(format!("loop diverged at t = {:.4}", k as f64 * dt)));
        }
        t.push(k as f64 * dt);
        y.push(yk);
        u.push(uk);
        if m_delay > 0 {
            u_hist.push(uk);
        }
        if k < steps {
            map.m.mul_to(&x, &mut x_next);
            if let Some(s) = &s_ud {
                x_next.axpy(ud, s, 1.0);
            }
            x_next.axpy(setpoint, &s_r, 1.0);
            std::mem::swap(&mut x, &mut x_next);
        }
    }
    Ok(Trajectory { t, y, u })
}

/// Open-loop unit step response. Dead time shifts the output by whole
/// samples (the delay is rounded to the time grid).
pub fn step_response(sys: &DelayTF, sim: &SimConfig) -> Result<Trajectory> {
    let dt = sim.dt();
    let rational = DelayTF::new(sys.num.clone(), sys.den.clone(), 0.0)?;
    let ss = tf_to_ss(&rational)?;
    let n = ss.order();

    let mut a = ss.a.clone();
    let scale = balance(&mut a);
    let mut b = ss.b.clone();
    let mut c = DVector::from_iterator(n, ss.c.iter().copied());
    for (i, &t) in scale.iter().enumerate() {
        b[i] /= t;
        c[i] *= t;
    }

    let map = rk4_map(&a, &DMatrix::from_column_slice(n, 1, b.as_slice()), dt);
    let s_col: DVector<f64> = map.s.column(0).clone_owned();
    let shift = (sys.delay_s / dt).round() as usize;

    let mut raw = Vec::with_capacity(sim.steps + 1);
    let mut x: DVector<f64> = DVector::zeros(n);
    let mut x_next: DVector<f64> = DVector::zeros(n);
    for k in 0..=sim.steps {
        let yk = c.dot(&x) + ss.d;
        if !yk.is_finite() || yk.abs() > DIVERGENCE_BOUND {
            return Err(Error::Unstable(format!("response diverged at t = {:.4}", k as f64 * dt)));
        }
        raw.push(yk);
        if k < sim.steps {
            map.m.mul_to(&x, &mut x_next);
            x_next.axpy(1.0, &s_col, 1.0);
            std::mem::swap(&mut x, &mut x_next);
        }
    }

    let t: Vec<f64> = (0..=sim.steps).map(|k| k as f64 * dt).collect();
    let y: Vec<f64> = (0..=sim.steps)
        .map(|k| if k >= shift { raw[k - shift] } else { 0.0 })
        .collect();
    let u = vec![1.0; sim.steps + 1];
    Ok(Trajectory { t, y, u })
}

/// Simulation plus cost in one call, mapping any failure (divergence,
/// unrealizable parameters) to the penalty cost. This is the single cost
/// path shared by tuning searches and rule evaluations.
pub fn closed_loop_cost(
    plant: &DelayTF,
    params: &ControllerParams,
    cfg: &FracApproxConfig,
    sim: &SimConfig,
    weights: &CostWeights,
    setpoint: f64,
) -> f64 {
    match simulate_step(plant, params, cfg, sim, setpoint) {
        Ok(traj) => cost_j(&traj, weights, setpoint),
        Err(_) => PENALTY_COST,
    }
}
