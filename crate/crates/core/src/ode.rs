//! Time integrators: adaptive Dormand-Prince 5(4) for the homogeneous ODEs and
//! classical RK4 for the method-of-lines systems.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// fifth-order weights minus embedded fourth-order weights
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dp5Options {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step magnitude; 0 picks one from the span.
    pub h0: f64,
    pub h_min: f64,
    pub max_steps: usize,
}

impl Default for Dp5Options {
    fn default() -> Self {
        Dp5Options { rtol: 1e-10, atol: 1e-14, h0: 0.0, h_min: 1e-12, max_steps: 1_000_000 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IntegratorStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

/// Accepted nodes of an adaptive run, in integration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub ts: Vec<f64>,
    pub ys: Vec<Vec<f64>>,
    pub stats: IntegratorStats,
}

impl Trajectory {
    /// State at time t: one fifth-order step from the nearest accepted node,
    /// so the error is of the size of a local step error.
    pub fn eval<F>(&self, t: f64, f: &mut F) -> Result<Vec<f64>>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    {
        let (lo, hi) = (self.ts[0].min(*self.ts.last().unwrap()), self.ts[0].max(*self.ts.last().unwrap()));
        if t < lo - 1e-12 || t > hi + 1e-12 {
            return Err(Error::Domain(format!("t = {t} outside trajectory span [{lo}, {hi}]")));
        }
        let i = self
            .ts
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(i, _)| i)
            .unwrap();
        let h = t - self.ts[i];
        if h == 0.0 {
            return Ok(self.ys[i].clone());
        }
        let mut k = vec![vec![0.0; self.ys[i].len()]; 7];
        let (y, _) = dp5_step(f, self.ts[i], &self.ys[i], h, &mut k)?;
        Ok(y)
    }

    pub fn last(&self) -> (f64, &[f64]) {
        (*self.ts.last().unwrap(), self.ys.last().unwrap())
    }
}

/// One Dormand-Prince step. Returns the fifth-order solution and the error estimate.
fn dp5_step<F>(f: &mut F, t: f64, y: &[f64], h: f64, k: &mut [Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let n = y.len();
    let mut tmp = vec![0.0; n];
    f(t, y, &mut k[0])?;
    for s in 1..7 {
        for j in 0..n {
            let mut acc = 0.0;
            for (r, kr) in k.iter().enumerate().take(s) {
                acc += A[s][r] * kr[j];
            }
            tmp[j] = y[j] + h * acc;
        }
        f(t + C[s] * h, &tmp, &mut k[s])?;
    }
    // the last stage was evaluated at the fifth-order solution itself
    let ynew = tmp;
    let err = (0..n).map(|j| h * (0..7).map(|s| E[s] * k[s][j]).sum::<f64>()).collect();
    Ok((ynew, err))
}

/// Adaptive integration from t0 to t1 (either direction).
pub fn dopri5<F>(f: F, t0: f64, y0: &[f64], t1: f64, opts: &Dp5Options) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    dopri5_projected(f, t0, y0, t1, opts, |_, _| Ok(()))
}

/// As [`dopri5`], with `project` applied to every accepted state before it is stored
/// and used as the start of the next step.
pub fn dopri5_projected<F, P>(mut f: F, t0: f64, y0: &[f64], t1: f64, opts: &Dp5Options, mut project: P) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    P: FnMut(f64, &mut [f64]) -> Result<()>,
{
    let n = y0.len();
    let dir = if t1 >= t0 { 1.0 } else { -1.0 };
    let span = (t1 - t0).abs();
    let mut h = if opts.h0 > 0.0 { opts.h0 } else { (span * 1e-3).max(1e-6) };
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k = vec![vec![0.0; n]; 7];
    let mut out = Trajectory { ts: vec![t0], ys: vec![y.clone()], stats: IntegratorStats::default() };
    if span == 0.0 {
        return Ok(out);
    }
    while (t1 - t) * dir > 0.0 {
        if out.stats.accepted + out.stats.rejected >= opts.max_steps {
            return Err(Error::StepUnderflow { t });
        }
        let last = (t1 - t).abs() <= h * (1.0 + 1e-12);
        let step = if last { t1 - t } else { dir * h };
        let (ynew, err) = dp5_step(&mut f, t, &y, step, &mut k)?;
        out.stats.rhs_evals += 7;
        let mut e2 = 0.0;
        for j in 0..n {
            let sc = opts.atol + opts.rtol * y[j].abs().max(ynew[j].abs());
            e2 += (err[j] / sc).powi(2);
        }
        let enorm = (e2 / n as f64).sqrt();
        if !enorm.is_finite() {
            return Err(Error::RegimeExit { t, what: "non-finite error estimate".into() });
        }
        let fac = if enorm == 0.0 { 5.0 } else { (0.9 * enorm.powf(-0.2)).clamp(0.2, 5.0) };
        if enorm <= 1.0 {
            t = if last { t1 } else { t + step };
            y = ynew;
            project(t, &mut y)?;
            out.ts.push(t);
            out.ys.push(y.clone());
            out.stats.accepted += 1;
            h = step.abs() * fac;
        } else {
            out.stats.rejected += 1;
            h = step.abs() * fac.min(1.0);
            if h < opts.h_min {
                return Err(Error::StepUnderflow { t });
            }
        }
    }
    Ok(out)
}

/// One classical fourth-order Runge-Kutta step.
pub fn rk4_step<F>(f: &mut F, t: f64, y: &[f64], dt: f64) -> Result<Vec<f64>>
where
    F: ?Sized + FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let k1 = f(t, y)?;
    let y2: Vec<f64> = y.iter().zip(&k1).map(|(a, b)| a + 0.5 * dt * b).collect();
    let k2 = f(t + 0.5 * dt, &y2)?;
    let y3: Vec<f64> = y.iter().zip(&k2).map(|(a, b)| a + 0.5 * dt * b).collect();
    let k3 = f(t + 0.5 * dt, &y3)?;
    let y4: Vec<f64> = y.iter().zip(&k3).map(|(a, b)| a + dt * b).collect();
    let k4 = f(t + dt, &y4)?;
    Ok((0..y.len()).map(|j| y[j] + dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_both_directions() {
        let f = |_t: f64, y: &[f64], d: &mut [f64]| {
            d[0] = -2.0 * y[0];
            d[1] = y[0];
            Ok(())
        };
        let tr = dopri5(f, 0.0, &[1.0, -0.5], 3.0, &Dp5Options::default()).unwrap();
        let (t, y) = tr.last();
        assert_eq!(t, 3.0);
        assert!((y[0] - (-6.0f64).exp()).abs() < 1e-11);
        assert!((y[1] - (-(-6.0f64).exp() / 2.0)).abs() < 1e-10);
        let back = dopri5(f, 3.0, y, 0.0, &Dp5Options::default()).unwrap();
        assert!((back.last().1[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn dense_output() {
        let mut f = |t: f64, _y: &[f64], d: &mut [f64]| {
            d[0] = t.cos();
            Ok(())
        };
        let tr = dopri5(f, 0.0, &[0.0], 10.0, &Dp5Options::default()).unwrap();
        for &t in &[0.3, 2.71, 7.77, 10.0] {
            let y = tr.eval(t, &mut f).unwrap();
            assert!((y[0] - t.sin()).abs() < 1e-9, "{t}");
        }
        assert!(tr.eval(11.0, &mut f).is_err());
    }

    #[test]
    fn rk4_order() {
        let mut f = |_t: f64, y: &[f64]| Ok(vec![-y[0]]);
        let run = |dt: f64, f: &mut dyn FnMut(f64, &[f64]) -> Result<Vec<f64>>| {
            let mut y = vec![1.0];
            let n = (1.0 / dt).round() as usize;
            for i in 0..n {
                y = rk4_step(f, i as f64 * dt, &y, dt).unwrap();
            }
            (y[0] - (-1.0f64).exp()).abs()
        };
        let r = run(0.1, &mut f) / run(0.05, &mut f);
        assert!((r - 16.0).abs() < 1.5, "{r}");
    }
}
