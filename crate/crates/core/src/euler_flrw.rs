//! Relativistic Euler equations on closed de Sitter, method of lines over the
//! S^3 spectral frame.
//!
//! The evolved fields are v_1, v_2, v_3 and q = rho^{2 r_s}; v_0 is derived from
//! v_0^2 = v_C v_C + q. With e_I = a^{-1} Y_I, n = 1 and k_IJ = -(a'/a) delta_IJ,
//! every connection contraction entering the fluid equations vanishes.

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::background::FlrwBackground;
use crate::error::{Error, Result};
use crate::params::SoundSpeedParams;
use crate::s3_frame::{ModeSpec, S3Spectral, SpectralField};

pub const N_FLUID: usize = 4;
pub const Q_ROW: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct FluidFieldState {
    pub t: f64,
    /// Rows v_1, v_2, v_3, q; columns are spectral coefficients.
    pub coeffs: Array2<f64>,
}

impl FluidFieldState {
    pub fn v(&self, i: usize) -> SpectralField {
        SpectralField { coeffs: self.coeffs.row(i - 1).to_owned() }
    }

    pub fn q(&self) -> SpectralField {
        SpectralField { coeffs: self.coeffs.row(Q_ROW).to_owned() }
    }

    /// Spatially constant state (v_1, 0, 0, q).
    pub fn homogeneous(sp: &S3Spectral, t: f64, v1: f64, q: f64) -> Self {
        let mut coeffs = Array2::zeros((N_FLUID, sp.dim()));
        coeffs[[0, 0]] = sp.constant(v1).coeffs[0];
        coeffs[[Q_ROW, 0]] = sp.constant(q).coeffs[0];
        FluidFieldState { t, coeffs }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepperConfig {
    pub dt: f64,
    /// Exponential filter rate per unit time; 0 disables the filter.
    pub filter_strength: f64,
    pub band_limit: usize,
    pub t_end: f64,
    /// Steps between stored snapshots.
    pub output_every: usize,
    /// Largest admissible dt as a fraction of a(t)/(L+1).
    pub cfl: f64,
    /// Parabolic limit dt <= c_parab (a/(L+1))^2, used by the coupled system.
    #[serde(default = "default_c_parab")]
    pub c_parab: f64,
    /// Coupled runs abort once the coefficient norm exceeds this multiple of its initial value.
    #[serde(default = "default_blowup")]
    pub blowup: f64,
    /// Refuse to start when dt violates the step limits.
    #[serde(default = "default_true")]
    pub check_limits: bool,
}

fn default_c_parab() -> f64 {
    0.5
}

fn default_blowup() -> f64 {
    1e3
}

fn default_true() -> bool {
    true
}

impl StepperConfig {
    pub fn new(dt: f64, band_limit: usize, t_end: f64) -> Self {
        StepperConfig {
            dt,
            filter_strength: 0.0,
            band_limit,
            t_end,
            output_every: 1,
            cfl: 1.0,
            c_parab: default_c_parab(),
            blowup: default_blowup(),
            check_limits: true,
        }
    }
}

impl StepperConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::Domain("dt must be positive".into()));
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(Error::Domain("CFL factor must lie in (0, 1]".into()));
        }
        if self.output_every == 0 {
            return Err(Error::Domain("output cadence must be at least one step".into()));
        }
        Ok(())
    }
}

/// Outcome of a time-stepping run: snapshots up to the last good state and the
/// error that stopped the run early, if any.
#[derive(Debug, Clone)]
pub struct RunResult<S> {
    pub snapshots: Vec<S>,
    pub failure: Option<Error>,
}

/// Pointwise inputs: fields, and Y_C applied to field f stored as dy[C][f].
struct Point {
    f: [f64; N_FLUID],
    dy: [[f64; N_FLUID]; 3],
}

pub struct EulerFlrw<'a> {
    pub sp: &'a S3Spectral,
    pub params: SoundSpeedParams,
    pub bg: FlrwBackground,
}

impl<'a> EulerFlrw<'a> {
    pub fn new(sp: &'a S3Spectral, params: SoundSpeedParams, bg: FlrwBackground) -> Self {
        EulerFlrw { sp, params, bg }
    }

    /// v_0 at every collocation node.
    pub fn derived_v0(&self, state: &FluidFieldState) -> Result<Vec<f64>> {
        let vals = self.sp.synthesize_batch(state.coeffs.view());
        (0..self.sp.n_points())
            .map(|p| {
                let q = vals[[Q_ROW, p]];
                if !(q > 0.0) {
                    return Err(Error::RegimeExit { t: state.t, what: format!("rho^(2rs) = {q} at node {p}") });
                }
                let v2: f64 = (0..3).map(|i| vals[[i, p]].powi(2)).sum();
                Ok((v2 + q).sqrt())
            })
            .collect()
    }

    fn kernel(&self, t: f64, a: f64, hub: f64, pt: &Point) -> Result<[f64; N_FLUID]> {
        let rs = self.params.rs;
        let v = [pt.f[0], pt.f[1], pt.f[2]];
        let q = pt.f[Q_ROW];
        if !(q > 0.0) || !q.is_finite() {
            return Err(Error::RegimeExit { t, what: format!("rho^(2rs) = {q}") });
        }
        let vv = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        let v0sq = vv + q;
        let v0 = v0sq.sqrt();
        // e_C f = a^{-1} Y_C f
        let e = |c: usize, f: usize| pt.dy[c][f] / a;
        let mut out = [0.0; N_FLUID];
        for i in 0..3 {
            let adv: f64 = (0..3).map(|c| v[c] * e(c, i)).sum();
            out[i] = adv / v0 - hub * v[i] + e(i, Q_ROW) / (2.0 * v0);
        }
        let mut vvdv = 0.0;
        for i in 0..3 {
            for d in 0..3 {
                vvdv += v[i] * v[d] * e(d, i);
            }
        }
        let div: f64 = (0..3).map(|c| e(c, c)).sum();
        let vdq: f64 = (0..3).map(|c| v[c] * e(c, Q_ROW)).sum();
        let w = (1.0 - 2.0 * rs) / (2.0 * rs);
        let a_coef = w + q / (2.0 * v0sq);
        let b_coef = w - q / (2.0 * v0sq);
        let src = -q / (v0sq * v0) * vvdv + q / v0 * div + b_coef * vdq / v0;
        // (v_C v_I k_CI / v0^2 - tr k) with k = -(a'/a) delta
        let kk = -hub * vv / v0sq + 3.0 * hub;
        out[Q_ROW] = (src - kk * q) / a_coef;
        Ok(out)
    }

    /// Time derivative of the coefficient matrix.
    pub fn rhs(&self, t: f64, coeffs: ArrayView2<f64>) -> Result<Array2<f64>> {
        let sp = self.sp;
        let vals = sp.synthesize_batch(coeffs);
        let dys = [sp.synthesize_y_batch(1, coeffs), sp.synthesize_y_batch(2, coeffs), sp.synthesize_y_batch(3, coeffs)];
        let (a, hub) = (self.bg.a(t), self.bg.hubble(t));
        let np = sp.n_points();
        let pts: Vec<[f64; N_FLUID]> = (0..np)
            .into_par_iter()
            .map(|p| {
                let mut pt = Point { f: [0.0; N_FLUID], dy: [[0.0; N_FLUID]; 3] };
                for f in 0..N_FLUID {
                    pt.f[f] = vals[[f, p]];
                    for c in 0..3 {
                        pt.dy[c][f] = dys[c][[f, p]];
                    }
                }
                self.kernel(t, a, hub, &pt)
            })
            .collect::<Result<_>>()?;
        let mut out = Array2::zeros((N_FLUID, np));
        for (p, r) in pts.iter().enumerate() {
            for f in 0..N_FLUID {
                out[[f, p]] = r[f];
            }
        }
        Ok(sp.analyze_batch(out.view()))
    }

    /// Largest dt allowed by the CFL factor at time t (signal speeds are at most 1).
    pub fn max_dt(&self, t: f64, cfl: f64) -> f64 {
        cfl * self.bg.a(t) / (self.sp.band_limit() as f64 + 1.0)
    }

    pub fn step(&self, state: &FluidFieldState, dt: f64, filter_strength: f64) -> Result<FluidFieldState> {
        let c = rk4_matrix(|t, c| self.rhs(t, c), state.t, &state.coeffs, dt)?;
        let mut next = FluidFieldState { t: state.t + dt, coeffs: c };
        apply_filter(self.sp, &mut next.coeffs, filter_strength * dt);
        check_fluid(self.sp, &next.coeffs, next.t)?;
        Ok(next)
    }

    /// Fixed-step RK4 from `initial` to cfg.t_end; `callback` sees every stored snapshot.
    pub fn evolve<F>(&self, initial: &FluidFieldState, cfg: &StepperConfig, mut callback: F) -> Result<RunResult<FluidFieldState>>
    where
        F: FnMut(&FluidFieldState),
    {
        cfg.validate()?;
        if cfg.check_limits && cfg.dt > self.max_dt(initial.t, cfg.cfl) {
            return Err(Error::Domain(format!(
                "dt = {} exceeds the CFL bound {} at t = {}",
                cfg.dt,
                self.max_dt(initial.t, cfg.cfl),
                initial.t
            )));
        }
        let n_steps = ((cfg.t_end - initial.t) / cfg.dt).round() as usize;
        let mut state = initial.clone();
        let mut out = RunResult { snapshots: vec![state.clone()], failure: None };
        callback(&state);
        for i in 1..=n_steps {
            match self.step(&state, cfg.dt, cfg.filter_strength) {
                Ok(mut s) => {
                    s.t = initial.t + i as f64 * cfg.dt;
                    state = s;
                }
                Err(e) => {
                    out.failure = Some(e);
                    return Ok(out);
                }
            }
            if i % cfg.output_every == 0 || i == n_steps {
                callback(&state);
                out.snapshots.push(state.clone());
            }
        }
        Ok(out)
    }
}

pub(crate) fn rk4_matrix<F>(mut f: F, t: f64, y: &Array2<f64>, dt: f64) -> Result<Array2<f64>>
where
    F: FnMut(f64, ArrayView2<f64>) -> Result<Array2<f64>>,
{
    let k1 = f(t, y.view())?;
    let k2 = f(t + 0.5 * dt, (y + &(&k1 * (0.5 * dt))).view())?;
    let k3 = f(t + 0.5 * dt, (y + &(&k2 * (0.5 * dt))).view())?;
    let k4 = f(t + dt, (y + &(&k3 * dt)).view())?;
    Ok(y + &((k1 + &(k2 * 2.0) + &(k3 * 2.0) + k4) * (dt / 6.0)))
}

pub(crate) fn apply_filter(sp: &S3Spectral, coeffs: &mut Array2<f64>, strength: f64) {
    if strength <= 0.0 {
        return;
    }
    let sigma = sp.filter_factors(strength);
    for mut row in coeffs.axis_iter_mut(Axis(0)) {
        for (c, s) in row.iter_mut().zip(&sigma) {
            *c *= s;
        }
    }
}

fn check_fluid(sp: &S3Spectral, coeffs: &Array2<f64>, t: f64) -> Result<()> {
    if coeffs.iter().any(|c| !c.is_finite()) {
        return Err(Error::RegimeExit { t, what: "non-finite coefficient".into() });
    }
    let q = sp.synthesize_batch(coeffs.slice(ndarray::s![Q_ROW..Q_ROW + 1, ..]));
    if let Some(m) = q.iter().copied().find(|x| !(*x > 0.0)) {
        return Err(Error::RegimeExit { t, what: format!("rho^(2rs) = {m}") });
    }
    Ok(())
}

/// Background fluid plus a band-limited perturbation:
/// v_I = v1_bg delta_I1 + amplitude |v1_bg| f_I and q = q_bg (1 + amplitude f_q),
/// with f_I, f_q independent unit-RMS random fields.
pub fn perturb_background(
    sp: &S3Spectral,
    t: f64,
    v1_bg: f64,
    q_bg: f64,
    amplitude: f64,
    modes: &ModeSpec,
) -> Result<FluidFieldState> {
    if !(q_bg > 0.0) {
        return Err(Error::Domain("background rho^(2rs) must be positive".into()));
    }
    let mut s = FluidFieldState::homogeneous(sp, t, v1_bg, q_bg);
    if amplitude != 0.0 {
        for i in 0..3 {
            let f = sp.random_band_field(modes, i as u64);
            let mut row = s.coeffs.row_mut(i);
            row.scaled_add(amplitude * v1_bg.abs(), &f.coeffs);
        }
        let f = sp.random_band_field(modes, Q_ROW as u64);
        s.coeffs.row_mut(Q_ROW).scaled_add(amplitude * q_bg, &f.coeffs);
    }
    check_fluid(sp, &s.coeffs, t).map_err(|_| Error::Domain(format!("amplitude {amplitude} violates positivity of rho^(2rs)")))?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::background::{FlrwKind, flrw};
    use crate::params::derive_params;

    #[test]
    fn orthogonal_v0() {
        let sp = S3Spectral::new(2).unwrap();
        let p = derive_params(0.5, 3.0).unwrap();
        let e = EulerFlrw::new(&sp, p, flrw(&p, FlrwKind::ClosedDeSitter));
        let s = FluidFieldState::homogeneous(&sp, 1.0, 0.0, 0.25);
        for v0 in e.derived_v0(&s).unwrap() {
            assert!((v0 - 0.5).abs() < 1e-14);
        }
    }

    #[test]
    fn orthogonal_density_rate() {
        // rho^{1 - r_s} a^3 conserved, so d/dt log q = -3 (2 r_s/(1 - r_s)) a'/a
        let sp = S3Spectral::new(1).unwrap();
        let p = derive_params(0.5, 3.0).unwrap();
        let e = EulerFlrw::new(&sp, p, flrw(&p, FlrwKind::ClosedDeSitter));
        let s = FluidFieldState::homogeneous(&sp, 0.7, 0.0, 0.3);
        let d = e.rhs(0.7, s.coeffs.view()).unwrap();
        let rate = d[[Q_ROW, 0]] / s.coeffs[[Q_ROW, 0]];
        let expect = -3.0 * 2.0 * p.rs / (1.0 - p.rs) * e.bg.hubble(0.7);
        assert!((rate - expect).abs() < 1e-13);
        assert!(d.iter().enumerate().all(|(i, x)| i == Q_ROW * sp.dim() || x.abs() < 1e-14));
    }

    #[test]
    fn positivity_guard() {
        let sp = S3Spectral::new(2).unwrap();
        let m = ModeSpec { degrees: vec![1, 2], seed: 3 };
        assert!(perturb_background(&sp, 1.0, 0.1, 0.01, 10.0, &m).is_err());
        let s = perturb_background(&sp, 1.0, 0.1, 0.01, 0.0, &m).unwrap();
        assert_eq!(s, FluidFieldState::homogeneous(&sp, 1.0, 0.1, 0.01));
    }
}
