//! Homogeneous tilted backgrounds, the closed de Sitter FLRW background and the
//! closed-form homogeneous Euler solutions on it.
//!
//! The mean curvature is stored through its deviation from de Sitter,
//! R_II = k_II + H, which keeps full relative precision at late times where
//! k_II + H is of order e^{-2Ht}. The frame carries both off-diagonal entries
//! e_3^2 and e_2^3: the k_23 coupling feeds e_2^3 at the same order as e_3^2.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{Dp5Options, Trajectory, dopri5_projected};
use crate::params::SoundSpeedParams;

pub const N_BG: usize = 15;

/// Default requirement e^{-2 H t_start} < this value.
pub const DEFAULT_START_SUPPRESSION: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackgroundReducedState {
    pub r11: f64,
    pub r22: f64,
    pub r33: f64,
    pub k23: f64,
    pub g221: f64,
    pub g123: f64,
    pub g231: f64,
    pub g312: f64,
    pub e11: f64,
    pub e22: f64,
    pub e33: f64,
    pub e32: f64,
    pub e23: f64,
    pub v1: f64,
    /// rho^{1 - 2 r_s}
    pub p: f64,
}

impl BackgroundReducedState {
    pub const NAMES: [&'static str; N_BG] = [
        "r11", "r22", "r33", "k23", "g221", "g123", "g231", "g312", "e11", "e22", "e33", "e32", "e23", "v1", "p",
    ];

    pub fn to_array(&self) -> [f64; N_BG] {
        [
            self.r11, self.r22, self.r33, self.k23, self.g221, self.g123, self.g231, self.g312, self.e11, self.e22,
            self.e33, self.e32, self.e23, self.v1, self.p,
        ]
    }

    pub fn from_slice(y: &[f64]) -> Self {
        BackgroundReducedState {
            r11: y[0],
            r22: y[1],
            r33: y[2],
            k23: y[3],
            g221: y[4],
            g123: y[5],
            g231: y[6],
            g312: y[7],
            e11: y[8],
            e22: y[9],
            e33: y[10],
            e32: y[11],
            e23: y[12],
            v1: y[13],
            p: y[14],
        }
    }

    pub fn tr_r(&self) -> f64 {
        self.r11 + self.r22 + self.r33
    }

    pub fn k11(&self, h: f64) -> f64 {
        self.r11 - h
    }
    pub fn k22(&self, h: f64) -> f64 {
        self.r22 - h
    }
    pub fn k33(&self, h: f64) -> f64 {
        self.r33 - h
    }

    pub fn tr_k(&self, h: f64) -> f64 {
        self.tr_r() - 3.0 * h
    }

    /// R_IJ = k_IJ + H delta_IJ.
    pub fn r_matrix(&self) -> [[f64; 3]; 3] {
        [[self.r11, 0.0, 0.0], [0.0, self.r22, self.k23], [0.0, self.k23, self.r33]]
    }

    pub fn k_matrix(&self, h: f64) -> [[f64; 3]; 3] {
        let mut k = self.r_matrix();
        for (i, row) in k.iter_mut().enumerate() {
            row[i] -= h;
        }
        k
    }

    /// gamma[I][J][B], antisymmetric in (J, B); gamma_331 = -gamma_221.
    pub fn gamma_tensor(&self) -> [[[f64; 3]; 3]; 3] {
        let mut g = [[[0.0; 3]; 3]; 3];
        let mut set = |i: usize, j: usize, b: usize, v: f64| {
            g[i - 1][j - 1][b - 1] = v;
            g[i - 1][b - 1][j - 1] = -v;
        };
        set(2, 2, 1, self.g221);
        set(3, 3, 1, -self.g221);
        set(1, 2, 3, self.g123);
        set(2, 3, 1, self.g231);
        set(3, 1, 2, self.g312);
        g
    }

    /// frame[I][i] = e_I^i.
    pub fn frame(&self) -> [[f64; 3]; 3] {
        [[self.e11, 0.0, 0.0], [0.0, self.e22, self.e23], [0.0, self.e32, self.e33]]
    }

    pub fn rho(&self, params: &SoundSpeedParams) -> f64 {
        if self.p <= 0.0 { 0.0 } else { self.p.powf(params.p_to_rho_power()) }
    }

    /// rho^{2 r_s}
    pub fn q(&self, params: &SoundSpeedParams) -> f64 {
        if self.p <= 0.0 { 0.0 } else { self.p.powf(params.p_to_q_power()) }
    }

    pub fn v0(&self, params: &SoundSpeedParams) -> f64 {
        (self.v1 * self.v1 + self.q(params)).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticData {
    /// Coefficients of e^{-3Ht} in k_II + H.
    pub k3: [f64; 3],
    /// Coefficient of e^{-3Ht} in k_23.
    pub k3_23: f64,
    pub g_inf: [f64; 3],
    pub v1_inf: f64,
    /// Coefficient of e^{-2Ht} in rho^{1 - 2 r_s}; zero selects vacuum.
    pub p_inf: f64,
}

impl AsymptoticData {
    /// Isotropic vacuum data matching closed de Sitter, G^inf = 1/(2H).
    pub fn de_sitter(h: f64) -> Self {
        AsymptoticData { k3: [0.0; 3], k3_23: 0.0, g_inf: [0.5 / h; 3], v1_inf: 0.0, p_inf: 0.0 }
    }

    /// Leading coefficients (gamma_123, gamma_231, gamma_312) fixed by G^inf.
    pub fn gamma_inf(&self) -> [f64; 3] {
        let [g1, g2, g3] = self.g_inf;
        let d = g1 * g2 * g3;
        [
            (g3 * g3 - g1 * g1 + g2 * g2) / d,
            (g1 * g1 - g2 * g2 + g3 * g3) / d,
            (g2 * g2 - g3 * g3 + g1 * g1) / d,
        ]
    }

    /// Coefficients of e^{-2Ht} in k_II + H. They are not free: balancing the
    /// e^{-2Ht} terms of the k equations against the quadratic connection terms
    /// gives H (r_II + tr r) = S_II. Leaving them out excites the e^{-3Ht} mode,
    /// which grows like e^{3H(t_start - t)} in a backward run.
    pub fn r_inf2(&self, h: f64) -> [f64; 3] {
        let [c123, c231, c312] = self.gamma_inf();
        let src = [2.0 * c231 * c312, 2.0 * c123 * c312, 2.0 * c231 * c123];
        let tr = src.iter().sum::<f64>() / (4.0 * h);
        src.map(|x| (x - h * tr) / h)
    }

    /// Leading frame coefficients e_I^I = 1/G_I.
    pub fn e_inf(&self) -> [f64; 3] {
        self.g_inf.map(|g| 1.0 / g)
    }
}

pub fn build_initial_state(
    data: &AsymptoticData,
    params: &SoundSpeedParams,
    t_start: f64,
) -> Result<BackgroundReducedState> {
    build_initial_state_with(data, params, t_start, DEFAULT_START_SUPPRESSION)
}

/// Truncated late-time expansion at t_start, with e^{-2 H t_start} < `suppression` required.
pub fn build_initial_state_with(
    data: &AsymptoticData,
    params: &SoundSpeedParams,
    t_start: f64,
    suppression: f64,
) -> Result<BackgroundReducedState> {
    if data.g_inf.iter().any(|g| !(*g > 0.0)) {
        return Err(Error::Domain("G_I^inf must be positive".into()));
    }
    if !(data.p_inf >= 0.0) {
        return Err(Error::Domain("density coefficient must be non-negative".into()));
    }
    let h = params.h;
    if (-2.0 * h * t_start).exp() >= suppression {
        return Err(Error::Domain(format!("t_start = {t_start} too early: e^(-2 H t_start) >= {suppression}")));
    }
    let e1 = (-h * t_start).exp();
    let e2 = e1 * e1;
    let e3 = e2 * e1;
    let [c123, c231, c312] = data.gamma_inf();
    let [f1, f2, f3] = data.e_inf();
    let r2 = data.r_inf2(h);
    Ok(BackgroundReducedState {
        r11: r2[0] * e2 + data.k3[0] * e3,
        r22: r2[1] * e2 + data.k3[1] * e3,
        r33: r2[2] * e2 + data.k3[2] * e3,
        k23: data.k3_23 * e3,
        g221: 0.0,
        g123: c123 * e1,
        g231: c231 * e1,
        g312: c312 * e1,
        e11: f1 * e1,
        e22: f2 * e1,
        e33: f3 * e1,
        e32: 0.0,
        e23: 0.0,
        v1: data.v1_inf * e1,
        p: data.p_inf * e2,
    })
}

/// Hamiltonian and momentum constraint quantities (C0, C1).
pub fn constraint_monitor(state: &BackgroundReducedState, params: &SoundSpeedParams) -> (f64, f64) {
    let (c0, c1, _, _) = constraint_terms(state, params);
    (c0, c1)
}

/// (C0, C1) together with the sums of absolute values of their terms.
pub fn constraint_terms(state: &BackgroundReducedState, params: &SoundSpeedParams) -> (f64, f64, f64, f64) {
    let s = state;
    let h = params.h;
    let tr = s.tr_r();
    let v0 = s.v0(params);
    let rho = s.rho(params);
    let pv = params.one_plus_cs2() * s.p;
    let t0 = [
        4.0 * h * tr,
        s.r11 * s.r11 + s.r22 * s.r22 + s.r33 * s.r33,
        2.0 * s.k23 * s.k23,
        -tr * tr,
        2.0 * pv * v0 * v0,
        -2.0 * params.cs2 * rho,
        -2.0 * (s.g231 * s.g123 + s.g123 * s.g312 + s.g312 * s.g231),
        s.g221 * s.g221 + s.g221 * s.g221,
    ];
    let t1 = [(s.r22 - s.r33) * s.g221, -s.k23 * (s.g312 - s.g231), pv * v0 * s.v1];
    (
        t0.iter().sum(),
        t1.iter().sum(),
        t0.iter().map(|x| x.abs()).sum(),
        t1.iter().map(|x| x.abs()).sum(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    pub max_iters: usize,
    /// Convergence threshold relative to the sum of absolute constraint terms.
    pub rel_tol: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions { max_iters: 50, rel_tol: 1e-15 }
    }
}

pub fn solve_constraints_at(
    state: &BackgroundReducedState,
    params: &SoundSpeedParams,
) -> Result<BackgroundReducedState> {
    solve_constraints_with(state, params, &NewtonOptions::default())
}

/// Damped Newton on (C0, C1) in the unknowns (trace shift s of R_II, k_23).
pub fn solve_constraints_with(
    state: &BackgroundReducedState,
    params: &SoundSpeedParams,
    opts: &NewtonOptions,
) -> Result<BackgroundReducedState> {
    let h = params.h;
    let mut s = *state;
    let converged = |c0: f64, c1: f64, a0: f64, a1: f64| {
        let sc = (a0 + a1).max(f64::MIN_POSITIVE);
        c0.abs() <= opts.rel_tol * sc * 8.0 && c1.abs() <= opts.rel_tol * sc * 8.0
    };
    let (mut c0, mut c1, mut a0, mut a1) = constraint_terms(&s, params);
    if converged(c0, c1, a0, a1) {
        return Ok(s);
    }
    for _ in 0..opts.max_iters {
        let j00 = 12.0 * h - 4.0 * s.tr_r();
        let j01 = 4.0 * s.k23;
        let j11 = -(s.g312 - s.g231);
        if j00 == 0.0 || !j00.is_finite() {
            return Err(Error::NewtonFailure { iters: 0, c0, c1 });
        }
        // with gamma_312 = gamma_231 the momentum constraint does not see k_23
        let dk = if j11.abs() > 1e-14 * (s.g312.abs() + s.g231.abs()) {
            -c1 / j11
        } else if c1.abs() <= opts.rel_tol * (a0 + a1) * 8.0 {
            0.0
        } else {
            return Err(Error::NewtonFailure { iters: 0, c0, c1 });
        };
        let ds = (-c0 - j01 * dk) / j00;
        let norm0 = c0.abs() + c1.abs();
        let mut lam = 1.0;
        loop {
            let mut trial = s;
            trial.r11 += lam * ds;
            trial.r22 += lam * ds;
            trial.r33 += lam * ds;
            trial.k23 += lam * dk;
            let (n0, n1, b0, b1) = constraint_terms(&trial, params);
            if n0.abs() + n1.abs() < norm0 || lam < 1e-4 || converged(n0, n1, b0, b1) {
                s = trial;
                (c0, c1, a0, a1) = (n0, n1, b0, b1);
                break;
            }
            lam *= 0.5;
        }
        if converged(c0, c1, a0, a1) {
            return Ok(s);
        }
    }
    // rounding can stall just above the strict threshold
    if converged(c0 / 64.0, c1 / 64.0, a0, a1) {
        return Ok(s);
    }
    Err(Error::NewtonFailure { iters: opts.max_iters, c0, c1 })
}

/// Time derivative of the homogeneous reduced system (unit lapse).
pub fn rhs_background(
    t: f64,
    state: &BackgroundReducedState,
    params: &SoundSpeedParams,
) -> Result<BackgroundReducedState> {
    let s = state;
    let h = params.h;
    if !(s.p >= 0.0) || !s.p.is_finite() {
        return Err(Error::RegimeExit { t, what: format!("rho^(1-2rs) = {}", s.p) });
    }
    let tr = s.tr_r();
    let (k11, k22, k33, k23) = (s.r11 - h, s.r22 - h, s.r33 - h, s.k23);
    let trk = tr - 3.0 * h;
    let rho = s.rho(params);
    let q = s.q(params);
    let v0sq = s.v1 * s.v1 + q;
    let half = 0.5 * (1.0 - params.cs2) * rho;
    let pv = params.one_plus_cs2() * s.p;
    let rr = |r: f64| -3.0 * h * r - h * tr + tr * r;
    let dp = if s.p == 0.0 || v0sq == 0.0 {
        0.0
    } else {
        let rs = params.rs;
        let lrho = (trk - k11 * s.v1 * s.v1 / v0sq) / (1.0 - 2.0 * rs + rs * q / v0sq);
        (1.0 - 2.0 * rs) * s.p * lrho
    };
    Ok(BackgroundReducedState {
        r11: rr(s.r11) - 2.0 * s.g221 * s.g221 + 2.0 * s.g231 * s.g312 - pv * s.v1 * s.v1 - half,
        r22: rr(s.r22) + 2.0 * s.g123 * s.g312 - half,
        r33: rr(s.r33) + 2.0 * s.g231 * s.g123 - half,
        k23: (trk) * k23 + 2.0 * s.g123 * s.g221,
        g221: k11 * s.g221 - k23 * (2.0 * s.g123 + s.g231 + s.g312),
        g123: k11 * s.g123 + (k11 - k22) * s.g312 + (k11 - k33) * s.g231 - 2.0 * k23 * s.g221,
        g231: k22 * s.g231 + (k22 - k33) * s.g123 + (k22 - k11) * s.g312,
        g312: k33 * s.g312 + (k33 - k11) * s.g231 + (k33 - k22) * s.g123,
        e11: k11 * s.e11,
        e22: k22 * s.e22 + k23 * s.e32,
        e33: k33 * s.e33 + k23 * s.e23,
        e32: k23 * s.e22 + k33 * s.e32,
        e23: k22 * s.e23 + k23 * s.e33,
        v1: k11 * s.v1,
        p: dp,
    })
}

fn rhs_slice(params: &SoundSpeedParams) -> impl FnMut(f64, &[f64], &mut [f64]) -> Result<()> + '_ {
    move |t, y, d| {
        let r = rhs_background(t, &BackgroundReducedState::from_slice(y), params)?;
        d.copy_from_slice(&r.to_array());
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSample {
    pub t: f64,
    pub c0: f64,
    pub c1: f64,
    /// Sum of absolute values of the terms of C0, for relative comparisons.
    pub c0_scale: f64,
    pub c1_scale: f64,
}

#[derive(Debug, Clone)]
pub struct BackgroundTrajectory {
    pub params: SoundSpeedParams,
    pub data: AsymptoticData,
    /// Time at which the constraints were solved.
    pub t_anchor: f64,
    pub path: Trajectory,
    pub monitors: Vec<ConstraintSample>,
}

impl BackgroundTrajectory {
    pub fn t_range(&self) -> (f64, f64) {
        let (a, b) = (self.path.ts[0], *self.path.ts.last().unwrap());
        (a.min(b), a.max(b))
    }

    pub fn state_at(&self, t: f64) -> Result<BackgroundReducedState> {
        let mut f = rhs_slice(&self.params);
        Ok(BackgroundReducedState::from_slice(&self.path.eval(t, &mut f)?))
    }

    /// Accepted nodes in increasing time order.
    pub fn nodes(&self) -> Vec<(f64, BackgroundReducedState)> {
        let mut v: Vec<_> = self
            .path
            .ts
            .iter()
            .zip(&self.path.ys)
            .map(|(t, y)| (*t, BackgroundReducedState::from_slice(y)))
            .collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    }

    /// Re-solve the constraints at t0 and integrate forward to t1.
    ///
    /// A backward run amplifies constraint rounding by e^{4H(t_start - T)} relative to the
    /// size of the constraint terms; the forward pass damps it instead.
    pub fn refined(&self, t0: f64, t1: f64, tol: f64) -> Result<BackgroundTrajectory> {
        let s0 = solve_constraints_at(&self.state_at(t0)?, &self.params)?;
        run(&self.params, self.data, s0, t0, t1, tol)
    }
}

fn run(
    params: &SoundSpeedParams,
    data: AsymptoticData,
    s0: BackgroundReducedState,
    t0: f64,
    t1: f64,
    tol: f64,
) -> Result<BackgroundTrajectory> {
    let opts = Dp5Options { rtol: tol, atol: tol * 1e-6, ..Dp5Options::default() };
    let project = |_t: f64, y: &mut [f64]| {
        let s = solve_constraints_at(&BackgroundReducedState::from_slice(y), params)?;
        y.copy_from_slice(&s.to_array());
        Ok(())
    };
    let path = dopri5_projected(rhs_slice(params), t0, &s0.to_array(), t1, &opts, project)?;
    let monitors = path
        .ts
        .iter()
        .zip(&path.ys)
        .map(|(t, y)| {
            let (c0, c1, c0_scale, c1_scale) = constraint_terms(&BackgroundReducedState::from_slice(y), params);
            ConstraintSample { t: *t, c0, c1, c0_scale, c1_scale }
        })
        .collect();
    Ok(BackgroundTrajectory { params: *params, data, t_anchor: t0, path, monitors })
}

/// Build, constraint-solve at t_start and integrate backwards to T.
pub fn integrate_background(
    data: &AsymptoticData,
    params: &SoundSpeedParams,
    t_end: f64,
    t_start: f64,
    tol: f64,
) -> Result<BackgroundTrajectory> {
    if !(t_end < t_start) {
        return Err(Error::Domain(format!("need T < t_start, got T = {t_end}, t_start = {t_start}")));
    }
    let s0 = solve_constraints_at(&build_initial_state(data, params, t_start)?, params)?;
    run(params, *data, s0, t_start, t_end, tol)
}

/// Integrate from an explicit state in either direction.
pub fn integrate_from(
    state: &BackgroundReducedState,
    data: &AsymptoticData,
    params: &SoundSpeedParams,
    t0: f64,
    t1: f64,
    tol: f64,
) -> Result<BackgroundTrajectory> {
    run(params, *data, *state, t0, t1, tol)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReconstruction {
    pub g1: f64,
    pub g2: f64,
    pub g3: f64,
    /// Off-diagonal factor with G^2 = g_23 (sign carried by G).
    pub g: f64,
    pub theta: f64,
    pub rho: f64,
    pub u0: f64,
    pub u1: f64,
}

/// Metric g = G1^2 w1^2 + G2^2 w2^2 + 2 G^2 w2 w3 + G3^2 w3^2 in the dual coframe of Y_i,
/// from g^{ij} = sum_I e_I^i e_I^j; cosh(theta) = u_0 = rho^{-r_s} v_0.
pub fn reconstruct_metric(
    state: &BackgroundReducedState,
    params: &SoundSpeedParams,
) -> Result<MetricReconstruction> {
    let s = state;
    if !(s.e11 > 0.0 && s.e22 > 0.0) {
        return Err(Error::DegenerateFrame { t: f64::NAN });
    }
    // inverse metric restricted to the (2,3) block
    let a = s.e22 * s.e22 + s.e32 * s.e32;
    let b = s.e22 * s.e23 + s.e32 * s.e33;
    let c = s.e23 * s.e23 + s.e33 * s.e33;
    let det = a * c - b * b;
    if !(det > 0.0) {
        return Err(Error::DegenerateFrame { t: f64::NAN });
    }
    let (g22, g23, g33) = (c / det, -b / det, a / det);
    let g2 = g22.sqrt();
    let g = g23.signum() * g23.abs().sqrt();
    if !(g33 - g23 * g23 / g22 > 0.0) {
        return Err(Error::DegenerateFrame { t: f64::NAN });
    }
    let rho = s.rho(params);
    let v0 = s.v0(params);
    let (u0, u1) = if rho > 0.0 {
        let f = rho.powf(-params.rs);
        (f * v0, f * s.v1)
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(MetricReconstruction {
        g1: 1.0 / s.e11,
        g2,
        g3: g33.sqrt(),
        g,
        theta: if u0.is_finite() { u0.max(1.0).acosh() } else { f64::NAN },
        rho,
        u0,
        u1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlrwKind {
    ClosedDeSitter,
}

/// Closed de Sitter scale factor a(t) = cosh(Ht)/H.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlrwBackground {
    pub h: f64,
    pub kind: FlrwKind,
}

pub fn flrw(params: &SoundSpeedParams, kind: FlrwKind) -> FlrwBackground {
    FlrwBackground { h: params.h, kind }
}

impl FlrwBackground {
    pub fn a(&self, t: f64) -> f64 {
        (self.h * t).cosh() / self.h
    }

    pub fn a_dot(&self, t: f64) -> f64 {
        (self.h * t).sinh()
    }

    /// a'/a = H tanh(Ht).
    pub fn hubble(&self, t: f64) -> f64 {
        self.h * (self.h * t).tanh()
    }

    /// H - a'/a, evaluated without cancellation.
    pub fn hubble_deficit(&self, t: f64) -> f64 {
        let x = (-2.0 * self.h * t.abs()).exp();
        let d = 2.0 * self.h * x / (1.0 + x);
        if t >= 0.0 { d } else { 2.0 * self.h - d }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomogeneousEuler {
    pub v1: f64,
    pub v0: f64,
    pub rho: f64,
}

/// Constants (c1, c2) of the homogeneous Euler flow matching late-time data
/// v1 ~ v1_inf e^{-Ht} and rho^{1-2r_s} ~ p_inf e^{-2Ht} on closed de Sitter.
pub fn euler_constants_from_data(v1_inf: f64, p_inf: f64, h: f64) -> (f64, f64) {
    (v1_inf / (2.0 * h), p_inf * v1_inf.abs() / (8.0 * h * h * h))
}

/// v1 = c1/a, and rho from rho^{1-2r_s} a^3 sqrt(c1^2/a^2 + rho^{2r_s}) = c2.
pub fn homogeneous_euler_exact(
    c1: f64,
    c2: f64,
    params: &SoundSpeedParams,
    bg: &FlrwBackground,
    t: f64,
) -> Result<HomogeneousEuler> {
    if !(c2 > 0.0) {
        return Err(Error::Bracket(format!("c2 = {c2} must be positive")));
    }
    let a = bg.a(t);
    let rs = params.rs;
    let w = c1 * c1 / (a * a);
    let target = c2.ln() - 3.0 * a.ln();
    // F(y) = (1-2r)y + 0.5 ln(w + e^{2ry}) - target, strictly increasing in y = ln rho
    let f = |y: f64| (1.0 - 2.0 * rs) * y + 0.5 * (w + (2.0 * rs * y).exp()).ln() - target;
    let df = |y: f64| {
        let e = (2.0 * rs * y).exp();
        (1.0 - 2.0 * rs) + rs * e / (w + e)
    };
    let y0 = target / (1.0 - rs);
    let (mut lo, mut hi) = (y0 - 1.0, y0 + 1.0);
    let mut n = 0;
    while f(lo) > 0.0 {
        lo -= 2.0 * (hi - lo);
        n += 1;
        if n > 200 {
            return Err(Error::Bracket("no lower bracket".into()));
        }
    }
    while f(hi) < 0.0 {
        hi += 2.0 * (hi - lo);
        n += 1;
        if n > 400 {
            return Err(Error::Bracket("no upper bracket".into()));
        }
    }
    let mut y = 0.5 * (lo + hi);
    for _ in 0..200 {
        let fy = f(y);
        if fy > 0.0 {
            hi = y;
        } else {
            lo = y;
        }
        let mut next = y - fy / df(y);
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - y).abs() <= 1e-15 * y.abs().max(1.0) {
            y = next;
            break;
        }
        y = next;
    }
    let rho = y.exp();
    let v1 = c1 / a;
    Ok(HomogeneousEuler { v1, v0: (v1 * v1 + rho.powf(2.0 * rs)).sqrt(), rho })
}

/// Closed de Sitter in reduced variables at time t (isotropic vacuum).
pub fn de_sitter_state(h: f64, t: f64) -> BackgroundReducedState {
    let bg = FlrwBackground { h, kind: FlrwKind::ClosedDeSitter };
    let r = bg.hubble_deficit(t);
    let e = h / (h * t).cosh();
    BackgroundReducedState {
        r11: r,
        r22: r,
        r33: r,
        k23: 0.0,
        g221: 0.0,
        g123: e,
        g231: e,
        g312: e,
        e11: e,
        e22: e,
        e33: e,
        e32: 0.0,
        e23: 0.0,
        v1: 0.0,
        p: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::derive_params;

    #[test]
    fn de_sitter_is_solution() {
        let p = derive_params(0.4, 3.0).unwrap();
        for &t in &[0.5, 2.0, 6.0] {
            let s = de_sitter_state(p.h, t);
            let (c0, c1) = constraint_monitor(&s, &p);
            assert!(c0.abs() < 1e-14 && c1 == 0.0);
            let d = rhs_background(t, &s, &p).unwrap();
            // d/dt of R = H(1 - tanh Ht) and of e = H / cosh Ht
            let dr = -p.h * p.h / (p.h * t).cosh().powi(2);
            let de = -p.h * p.h * (p.h * t).tanh() / (p.h * t).cosh();
            assert!((d.r11 - dr).abs() < 1e-12);
            assert!((d.e22 - de).abs() < 1e-12);
            assert!((d.g123 - de).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_g_gives_unit_gamma() {
        let d = AsymptoticData { k3: [0.0; 3], k3_23: 0.0, g_inf: [1.0; 3], v1_inf: 0.0, p_inf: 0.0 };
        assert_eq!(d.gamma_inf(), [1.0, 1.0, 1.0]);
    }

    #[test]
    fn zero_tilt_stays_zero() {
        let p = derive_params(0.5, 3.0).unwrap();
        let mut s = de_sitter_state(p.h, 3.0);
        s.p = 1e-3;
        let d = rhs_background(3.0, &s, &p).unwrap();
        assert_eq!(d.v1, 0.0);
        s.v1 = 0.2;
        let d = rhs_background(3.0, &s, &p).unwrap();
        assert_eq!(d.v1, s.k11(p.h) * s.v1);
    }

    #[test]
    fn rejects_bad_data() {
        let p = derive_params(0.4, 3.0).unwrap();
        let mut d = AsymptoticData::de_sitter(1.0);
        d.g_inf[1] = 0.0;
        assert!(build_initial_state(&d, &p, 10.0).is_err());
        let d = AsymptoticData::de_sitter(1.0);
        assert!(build_initial_state(&d, &p, 1.0).is_err());
        let mut s = de_sitter_state(1.0, 1.0);
        s.p = -1.0;
        assert!(matches!(rhs_background(1.0, &s, &p), Err(Error::RegimeExit { .. })));
    }

    #[test]
    fn flrw_values() {
        let p = derive_params(0.4, 3.0).unwrap();
        let bg = flrw(&p, FlrwKind::ClosedDeSitter);
        assert!((bg.a(0.0) - 1.0 / p.h).abs() < 1e-15);
        for &t in &[0.1, 1.0, 5.0, 20.0] {
            assert!((bg.hubble(t) + bg.hubble_deficit(t) - p.h).abs() < 1e-14);
            assert!((bg.a_dot(t) / bg.a(t) - bg.hubble(t)).abs() < 1e-14);
        }
        let t: f64 = 15.0;
        assert!(((-2.0 * t).exp() * bg.a(t).powi(2) * 4.0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_reconstruction() {
        let p = derive_params(0.4, 3.0).unwrap();
        let mut s = de_sitter_state(1.0, 2.0);
        s.e33 = 0.25;
        let m = reconstruct_metric(&s, &p).unwrap();
        assert_eq!(m.g, 0.0);
        assert!((m.g3 - 4.0).abs() < 1e-15);
        s.e22 = 0.0;
        assert!(reconstruct_metric(&s, &p).is_err());
    }

    #[test]
    fn orthogonal_exact_solution() {
        let p = derive_params(0.5, 3.0).unwrap();
        let bg = flrw(&p, FlrwKind::ClosedDeSitter);
        let c2 = 0.7;
        for &t in &[0.0, 1.0, 4.0] {
            let s = homogeneous_euler_exact(0.0, c2, &p, &bg, t).unwrap();
            let expect = (c2 / bg.a(t).powi(3)).powf(1.0 / (1.0 - p.rs));
            assert!((s.rho / expect - 1.0).abs() < 1e-12);
        }
        assert!(homogeneous_euler_exact(1.0, 0.0, &p, &bg, 1.0).is_err());
    }
}
