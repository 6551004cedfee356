//! Coupled reduced Einstein-Euler system in the parabolic-lapse gauge
//! n - 1 = tr k~ - tr k, discretized over the S^3 spectral frame.
//!
//! Field rows of a [`CoupledState`] (29 in total):
//! R_11, R_12, R_13, R_22, R_23, R_33 with R_IJ = k_IJ + H delta_IJ;
//! gamma_I12, gamma_I13, gamma_I23 for I = 1, 2, 3; e_I^i row-major; m = n - 1;
//! v_1, v_2, v_3; q = rho^{2 r_s}.
//!
//! Frame derivatives are e_I f = e_I^i Y_i f, formed pointwise after spectral
//! differentiation. Products are evaluated on the 3L grid and projected back to L.

use ndarray::{Array1, Array2, ArrayView2};
use rand::{RngExt, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::background::{
    BackgroundReducedState, BackgroundTrajectory, FlrwBackground, FlrwKind, de_sitter_state, rhs_background,
    solve_constraints_at,
};
use crate::error::{Error, Result};
use crate::euler_flrw::{FluidFieldState, RunResult, StepperConfig, apply_filter, rk4_matrix};
use crate::params::SoundSpeedParams;
use crate::s3_frame::{ModeSpec, S3Spectral, SpectralField};

pub const N_COUPLED: usize = 29;
pub const M_ROW: usize = 24;
pub const Q_ROW: usize = 28;

pub const FIELD_NAMES: [&str; N_COUPLED] = [
    "R11", "R12", "R13", "R22", "R23", "R33", "g112", "g113", "g123", "g212", "g213", "g223", "g312", "g313", "g323",
    "e11", "e12", "e13", "e21", "e22", "e23", "e31", "e32", "e33", "m", "v1", "v2", "v3", "q",
];

/// Row of R_IJ (0-based indices).
pub fn r_row(i: usize, j: usize) -> usize {
    match (i.min(j), i.max(j)) {
        (0, 0) => 0,
        (0, 1) => 1,
        (0, 2) => 2,
        (1, 1) => 3,
        (1, 2) => 4,
        _ => 5,
    }
}

/// Row and sign of gamma_IJB (0-based), None on the vanishing diagonal J = B.
pub fn gamma_row(i: usize, j: usize, b: usize) -> Option<(usize, f64)> {
    if j == b {
        return None;
    }
    let (lo, hi, sign) = if j < b { (j, b, 1.0) } else { (b, j, -1.0) };
    let pair = match (lo, hi) {
        (0, 1) => 0,
        (0, 2) => 1,
        _ => 2,
    };
    Some((6 + 3 * i + pair, sign))
}

/// Row of e_I^i (0-based).
pub fn e_row(i: usize, a: usize) -> usize {
    15 + 3 * i + a
}

pub fn v_row(i: usize) -> usize {
    25 + i
}

pub type Mat3 = [[f64; 3]; 3];
pub type Tensor3 = [[[f64; 3]; 3]; 3];

const EPS: Tensor3 = {
    let mut e = [[[0.0; 3]; 3]; 3];
    e[0][1][2] = 1.0;
    e[1][2][0] = 1.0;
    e[2][0][1] = 1.0;
    e[1][0][2] = -1.0;
    e[2][1][0] = -1.0;
    e[0][2][1] = -1.0;
    e
};

pub fn inverse3(m: &Mat3) -> Option<Mat3> {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (a, b) = ((j + 1) % 3, (j + 2) % 3);
            let (c, d) = ((i + 1) % 3, (i + 2) % 3);
            inv[i][j] = (m[a][c] * m[b][d] - m[a][d] * m[b][c]) / det;
        }
    }
    Some(inv)
}

pub fn det3(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Connection coefficients of the orthonormal frame e_I = e_I^i Y_i from the Koszul formula,
/// gamma_IJB = (c_IJB - c_JBI + c_BIJ)/2 with [e_I, e_J] = c_IJ^K e_K.
/// `de[c][I][i]` holds Y_c e_I^i.
pub fn koszul_gamma(e: &Mat3, de: &[Mat3; 3]) -> Option<Tensor3> {
    let inv = inverse3(e)?;
    // e_I(e_J^l)
    let ed = |i: usize, j: usize, l: usize| (0..3).map(|c| e[i][c] * de[c][j][l]).sum::<f64>();
    let mut c = [[[0.0; 3]; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut x = [0.0; 3];
            for (l, xl) in x.iter_mut().enumerate() {
                let mut s = ed(i, j, l) - ed(j, i, l);
                for a in 0..3 {
                    for b in 0..3 {
                        s += 2.0 * e[i][a] * e[j][b] * EPS[a][b][l];
                    }
                }
                *xl = s;
            }
            for k in 0..3 {
                c[i][j][k] = (0..3).map(|l| x[l] * inv[l][k]).sum();
            }
        }
    }
    let mut g = [[[0.0; 3]; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for b in 0..3 {
                g[i][j][b] = 0.5 * (c[i][j][b] - c[j][b][i] + c[b][i][j]);
            }
        }
    }
    Some(g)
}

/// Geometry seen by the fluid at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluidGeometry {
    pub n: f64,
    /// e_C n
    pub dn: [f64; 3],
    pub k: Mat3,
    pub gamma: Tensor3,
}

/// Fluid fields and their frame derivatives at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluidPoint {
    pub v: [f64; 3],
    pub q: f64,
    /// dv[C][I] = e_C v_I
    pub dv: Mat3,
    /// dq[C] = e_C q
    pub dq: [f64; 3],
}

/// e_0 v_I and e_0 q from the system with v_0 eliminated through v_0^2 = v_C v_C + q.
pub fn fluid_e0(g: &FluidGeometry, f: &FluidPoint, rs: f64) -> ([f64; 3], f64) {
    let v = f.v;
    let q = f.q;
    let v0sq = v[0] * v[0] + v[1] * v[1] + v[2] * v[2] + q;
    let v0 = v0sq.sqrt();
    let ninv = 1.0 / g.n;
    let mut gvv = [0.0; 3];
    for (i, gi) in gvv.iter_mut().enumerate() {
        for c in 0..3 {
            for d in 0..3 {
                *gi += g.gamma[c][d][i] * v[c] * v[d];
            }
        }
    }
    let mut e0v = [0.0; 3];
    for i in 0..3 {
        let mut s = 0.0;
        for c in 0..3 {
            s += v[c] * f.dv[c][i] + g.k[c][i] * v0 * v[c];
        }
        s += 0.5 * f.dq[i] + ninv * g.dn[i] * v0sq + gvv[i];
        e0v[i] = s / v0;
    }
    let w = (1.0 - 2.0 * rs) / (2.0 * rs);
    let a = w + q / (2.0 * v0sq);
    let b = w - q / (2.0 * v0sq);
    let mut vvdv = 0.0;
    let mut kvv = 0.0;
    for i in 0..3 {
        for d in 0..3 {
            vvdv += v[i] * v[d] * f.dv[d][i];
            kvv += v[i] * v[d] * g.k[d][i];
        }
    }
    let div: f64 = (0..3).map(|c| f.dv[c][c]).sum();
    let vdq: f64 = (0..3).map(|c| v[c] * f.dq[c]).sum();
    let mut t1 = 0.0;
    for i in 0..3 {
        t1 += v[i] * (ninv * g.dn[i] * v0sq + gvv[i]);
    }
    let mut t2 = 0.0;
    for c in 0..3 {
        t2 += ninv * g.dn[c] * v[c];
        for d in 0..3 {
            t2 += g.gamma[c][d][c] * v[d];
        }
    }
    let src = -q / (v0sq * v0) * vvdv + q / v0 * div + b * vdq / v0 - q / (v0sq * v0) * t1 + q / v0 * t2;
    let trk = g.k[0][0] + g.k[1][1] + g.k[2][2];
    let e0q = (src - (kvv / v0sq - trk) * q) / a;
    (e0v, e0q)
}

/// Residuals of the un-eliminated fluid equations (v_0, v_I and log rho forms) for given
/// e_0 v_I and e_0 q. `dv0` is e_C v_0, consistent with the algebraic identity.
pub fn direct_fluid_residuals(g: &FluidGeometry, f: &FluidPoint, rs: f64, e0v: &[f64; 3], e0q: f64) -> [f64; 5] {
    let v = f.v;
    let q = f.q;
    let v0sq = v[0] * v[0] + v[1] * v[1] + v[2] * v[2] + q;
    let v0 = v0sq.sqrt();
    let ninv = 1.0 / g.n;
    let dv0: Vec<f64> = (0..3).map(|c| ((0..3).map(|i| v[i] * f.dv[c][i]).sum::<f64>() + 0.5 * f.dq[c]) / v0).collect();
    let e0v0 = ((0..3).map(|i| v[i] * e0v[i]).sum::<f64>() + 0.5 * e0q) / v0;
    let mut kvv = 0.0;
    for c in 0..3 {
        for d in 0..3 {
            kvv += g.k[c][d] * v[c] * v[d];
        }
    }
    // v^a e_a = -v_0 e_0 + v_C e_C
    let vdot = |e0: f64, dc: &dyn Fn(usize) -> f64| -v0 * e0 + (0..3).map(|c| v[c] * dc(c)).sum::<f64>();
    let r_v0 = vdot(e0v0, &|c| dv0[c]) + kvv + 0.5 * e0q + (0..3).map(|c| ninv * g.dn[c] * v0 * v[c]).sum::<f64>();
    let mut out = [0.0; 5];
    out[0] = r_v0;
    for i in 0..3 {
        let mut s = vdot(e0v[i], &|c| f.dv[c][i]);
        for c in 0..3 {
            s += g.k[c][i] * v0 * v[c];
            for d in 0..3 {
                s += g.gamma[c][d][i] * v[c] * v[d];
            }
        }
        s += 0.5 * f.dq[i] + ninv * g.dn[i] * v0sq;
        out[1 + i] = s;
    }
    // (1 - 2 r_s) v^a e_a log rho + v_0 tr k = e_0 v_0 - e_C v_C - n^{-1}(e_C n) v_C - gamma_CDC v_D
    let lr = |x: f64| x / (2.0 * rs * q);
    let vlogrho = vdot(lr(e0q), &|c| lr(f.dq[c]));
    let trk = g.k[0][0] + g.k[1][1] + g.k[2][2];
    let mut rhs = e0v0;
    for c in 0..3 {
        rhs -= f.dv[c][c] + ninv * g.dn[c] * v[c];
        for d in 0..3 {
            rhs -= g.gamma[c][d][c] * v[d];
        }
    }
    out[4] = (1.0 - 2.0 * rs) * vlogrho + v0 * trk - rhs;
    out
}

/// Spatially homogeneous reference solution used for the gauge and the hatted variables.
pub trait HomogeneousBackground: Sync {
    fn state_at(&self, t: f64) -> Result<BackgroundReducedState>;
    fn params(&self) -> &SoundSpeedParams;
}

impl HomogeneousBackground for BackgroundTrajectory {
    fn state_at(&self, t: f64) -> Result<BackgroundReducedState> {
        BackgroundTrajectory::state_at(self, t)
    }
    fn params(&self) -> &SoundSpeedParams {
        &self.params
    }
}

/// Closed de Sitter in closed form (vacuum, isotropic).
#[derive(Debug, Clone, Copy)]
pub struct ExactDeSitter {
    pub params: SoundSpeedParams,
}

impl HomogeneousBackground for ExactDeSitter {
    fn state_at(&self, t: f64) -> Result<BackgroundReducedState> {
        Ok(de_sitter_state(self.params.h, t))
    }
    fn params(&self) -> &SoundSpeedParams {
        &self.params
    }
}

impl ExactDeSitter {
    pub fn flrw(&self) -> FlrwBackground {
        FlrwBackground { h: self.params.h, kind: FlrwKind::ClosedDeSitter }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledState {
    pub t: f64,
    /// N_COUPLED x B coefficient matrix.
    pub coeffs: Array2<f64>,
    /// Whether the constraints were solved when the data were built.
    pub constraint_solved: bool,
}

impl CoupledState {
    pub fn field(&self, row: usize) -> SpectralField {
        SpectralField { coeffs: self.coeffs.row(row).to_owned() }
    }

    pub fn n(&self, sp: &S3Spectral) -> SpectralField {
        let mut f = self.field(M_ROW);
        f.coeffs[0] += sp.constant(1.0).coeffs[0];
        f
    }

    pub fn fluid(&self) -> FluidFieldState {
        FluidFieldState { t: self.t, coeffs: self.coeffs.slice(ndarray::s![25..29, ..]).to_owned() }
    }

    /// Constant fields equal to a homogeneous state, lapse from the gauge with background trace `tr_r_bg`.
    pub fn from_homogeneous(
        sp: &S3Spectral,
        t: f64,
        s: &BackgroundReducedState,
        params: &SoundSpeedParams,
        tr_r_bg: f64,
    ) -> Self {
        let mut vals = [0.0; N_COUPLED];
        let r = s.r_matrix();
        for i in 0..3 {
            for j in i..3 {
                vals[r_row(i, j)] = r[i][j];
            }
        }
        let g = s.gamma_tensor();
        for i in 0..3 {
            for (j, b) in [(0, 1), (0, 2), (1, 2)] {
                vals[gamma_row(i, j, b).unwrap().0] = g[i][j][b];
            }
        }
        let e = s.frame();
        for i in 0..3 {
            for a in 0..3 {
                vals[e_row(i, a)] = e[i][a];
            }
        }
        vals[M_ROW] = tr_r_bg - s.tr_r();
        vals[v_row(0)] = s.v1;
        vals[Q_ROW] = s.q(params);
        let c0 = sp.constant(1.0).coeffs[0];
        let mut coeffs = Array2::zeros((N_COUPLED, sp.dim()));
        for (f, v) in vals.iter().enumerate() {
            coeffs[[f, 0]] = v * c0;
        }
        CoupledState { t, coeffs, constraint_solved: true }
    }
}

/// Pointwise values needed by the kernels.
struct Node {
    f: [f64; N_COUPLED],
    /// Y_c applied to every field
    dy: [[f64; N_COUPLED]; 3],
    /// Y_i Y_j m
    ymm: Mat3,
}

struct Unpacked {
    n: f64,
    r: Mat3,
    k: Mat3,
    g: Tensor3,
    e: Mat3,
    v: [f64; 3],
    q: f64,
}

fn unpack(f: &[f64; N_COUPLED], h: f64) -> Unpacked {
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = f[r_row(i, j)];
        }
    }
    let mut k = r;
    for (i, row) in k.iter_mut().enumerate() {
        row[i] -= h;
    }
    let mut g = [[[0.0; 3]; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for b in 0..3 {
                if let Some((row, s)) = gamma_row(i, j, b) {
                    g[i][j][b] = s * f[row];
                }
            }
        }
    }
    let mut e = [[0.0; 3]; 3];
    for i in 0..3 {
        for a in 0..3 {
            e[i][a] = f[e_row(i, a)];
        }
    }
    Unpacked { n: 1.0 + f[M_ROW], r, k, g, e, v: [f[25], f[26], f[27]], q: f[Q_ROW] }
}

impl Node {
    /// e_I applied to field `row`.
    fn ef(&self, e: &Mat3, i: usize, row: usize) -> f64 {
        (0..3).map(|a| e[i][a] * self.dy[a][row]).sum()
    }

    /// e_I applied to gamma_JBC.
    fn eg(&self, e: &Mat3, i: usize, j: usize, b: usize, c: usize) -> f64 {
        match gamma_row(j, b, c) {
            Some((row, s)) => s * self.ef(e, i, row),
            None => 0.0,
        }
    }

    /// e_I e_J n
    fn een(&self, e: &Mat3, i: usize, j: usize) -> f64 {
        let mut s = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                s += e[i][a] * (self.dy[a][e_row(j, b)] * self.dy[b][M_ROW] + e[j][b] * self.ymm[a][b]);
            }
        }
        s
    }
}

/// Background scalars entering the coupled equations at one time.
#[derive(Debug, Clone, Copy)]
struct BgScalars {
    tr_r: f64,
    d_tr_r: f64,
}

#[derive(Debug, Clone)]
pub struct ConstraintFields {
    pub hamiltonian: SpectralField,
    pub momentum: [SpectralField; 3],
    /// Grid maxima of |Ham| and |Mom|.
    pub ham_max: f64,
    pub mom_max: f64,
}

pub struct CoupledSystem<'a, B: HomogeneousBackground> {
    pub sp: &'a S3Spectral,
    pub params: SoundSpeedParams,
    pub bg: &'a B,
}

impl<'a, B: HomogeneousBackground> CoupledSystem<'a, B> {
    pub fn new(sp: &'a S3Spectral, bg: &'a B) -> Self {
        CoupledSystem { sp, params: *bg.params(), bg }
    }

    fn bg_scalars(&self, t: f64) -> Result<BgScalars> {
        let s = self.bg.state_at(t)?;
        let d = rhs_background(t, &s, &self.params)?;
        Ok(BgScalars { tr_r: s.tr_r(), d_tr_r: d.tr_r() })
    }

    fn nodes(&self, coeffs: ArrayView2<f64>) -> Vec<Node> {
        let sp = self.sp;
        let vals = sp.synthesize_batch(coeffs);
        let dys = [sp.synthesize_y_batch(1, coeffs), sp.synthesize_y_batch(2, coeffs), sp.synthesize_y_batch(3, coeffs)];
        let m = coeffs.slice(ndarray::s![M_ROW..M_ROW + 1, ..]);
        let mut ymm = Vec::with_capacity(9);
        for i in 1..=3 {
            for j in 1..=3 {
                let yj = sp.apply_y_batch(j, m);
                ymm.push(sp.synthesize_y_batch(i, yj.view()));
            }
        }
        (0..sp.n_points())
            .map(|p| {
                let mut nd = Node { f: [0.0; N_COUPLED], dy: [[0.0; N_COUPLED]; 3], ymm: [[0.0; 3]; 3] };
                for f in 0..N_COUPLED {
                    nd.f[f] = vals[[f, p]];
                    for c in 0..3 {
                        nd.dy[c][f] = dys[c][[f, p]];
                    }
                }
                for i in 0..3 {
                    for j in 0..3 {
                        nd.ymm[i][j] = ymm[3 * i + j][[0, p]];
                    }
                }
                nd
            })
            .collect()
    }

    fn kernel(&self, t: f64, bs: BgScalars, nd: &Node) -> Result<[f64; N_COUPLED]> {
        let h = self.params.h;
        let cs2 = self.params.cs2;
        let rs = self.params.rs;
        let u = unpack(&nd.f, h);
        let (n, r, k, g, e) = (u.n, u.r, u.k, u.g, u.e);
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::RegimeExit { t, what: format!("lapse n = {n}") });
        }
        if !(u.q > 0.0) || !u.q.is_finite() {
            return Err(Error::RegimeExit { t, what: format!("rho^(2rs) = {}", u.q) });
        }
        if det3(&e).abs() < 1e-300 {
            return Err(Error::DegenerateFrame { t });
        }
        let m = n - 1.0;
        let ninv = 1.0 / n;
        let rho = u.q.powf(1.0 / (2.0 * rs));
        let pp = u.q.powf((1.0 - 2.0 * rs) / (2.0 * rs));
        let dn: [f64; 3] = std::array::from_fn(|c| nd.ef(&e, c, M_ROW));
        let tr_r = r[0][0] + r[1][1] + r[2][2];
        let mut out = [0.0; N_COUPLED];

        // mean curvature
        let mut x = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let d = if i == j { 1.0 } else { 0.0 };
                let mut s = h * d * (m - bs.tr_r) - (m + 3.0 * h - bs.tr_r) * r[i][j] - ninv * nd.een(&e, i, j);
                for c in 0..3 {
                    s += nd.eg(&e, c, i, j, c) - nd.eg(&e, i, c, j, c) + ninv * g[i][j][c] * dn[c];
                    for dd in 0..3 {
                        s -= g[c][i][dd] * g[dd][j][c] + g[i][j][dd] * g[c][c][dd];
                    }
                }
                s -= (1.0 + cs2) * pp * u.v[i] * u.v[j] + 0.5 * d * (1.0 - cs2) * rho;
                x[i][j] = s;
            }
        }
        for i in 0..3 {
            for j in i..3 {
                out[r_row(i, j)] = n * 0.5 * (x[i][j] + x[j][i]);
            }
        }

        // connection
        for i in 0..3 {
            for (j, b) in [(0, 1), (0, 2), (1, 2)] {
                let mut s = nd.ef(&e, b, r_row(i, j)) - nd.ef(&e, j, r_row(b, i));
                for c in 0..3 {
                    s += k[i][c] * g[c][j][b] - k[i][c] * g[b][j][c] - k[c][j] * g[b][i][c]
                        + k[i][c] * g[j][b][c]
                        + k[b][c] * g[j][i][c];
                }
                out[gamma_row(i, j, b).unwrap().0] = n * s + dn[b] * k[j][i] - dn[j] * k[b][i];
            }
        }

        // frame
        for i in 0..3 {
            for a in 0..3 {
                out[e_row(i, a)] = n * (0..3).map(|c| k[i][c] * e[c][a]).sum::<f64>();
            }
        }

        // lapse
        let mut lap = 0.0;
        let mut rr = 0.0;
        for c in 0..3 {
            lap += nd.een(&e, c, c);
            for d in 0..3 {
                lap -= g[c][c][d] * dn[d];
                rr += r[c][d] * r[c][d];
            }
        }
        let vv = u.v[0] * u.v[0] + u.v[1] * u.v[1] + u.v[2] * u.v[2];
        out[M_ROW] = bs.d_tr_r + lap + n * (2.0 * h * tr_r - rr) - (1.0 + cs2) * n * pp * vv - 0.5 * (1.0 + 3.0 * cs2) * n * rho;

        // fluid
        let geo = FluidGeometry { n, dn, k, gamma: g };
        let fp = FluidPoint {
            v: u.v,
            q: u.q,
            dv: std::array::from_fn(|c| std::array::from_fn(|i| nd.ef(&e, c, v_row(i)))),
            dq: std::array::from_fn(|c| nd.ef(&e, c, Q_ROW)),
        };
        let (e0v, e0q) = fluid_e0(&geo, &fp, rs);
        for i in 0..3 {
            out[v_row(i)] = n * e0v[i];
        }
        out[Q_ROW] = n * e0q;
        Ok(out)
    }

    /// Time derivative of the coefficient matrix.
    pub fn rhs(&self, t: f64, coeffs: ArrayView2<f64>) -> Result<Array2<f64>> {
        let bs = self.bg_scalars(t)?;
        let nodes = self.nodes(coeffs);
        let vals: Vec<[f64; N_COUPLED]> = nodes.par_iter().map(|nd| self.kernel(t, bs, nd)).collect::<Result<_>>()?;
        let mut out = Array2::zeros((N_COUPLED, vals.len()));
        for (p, v) in vals.iter().enumerate() {
            for f in 0..N_COUPLED {
                out[[f, p]] = v[f];
            }
        }
        Ok(self.sp.analyze_batch(out.view()))
    }

    /// Hamiltonian and momentum constraint residuals, written as LHS - RHS.
    pub fn constraint_residuals(&self, state: &CoupledState) -> Result<ConstraintFields> {
        let h = self.params.h;
        let cs2 = self.params.cs2;
        let rs = self.params.rs;
        let bs = self.bg_scalars(state.t)?;
        let nodes = self.nodes(state.coeffs.view());
        let vals: Vec<[f64; 4]> = nodes
            .par_iter()
            .map(|nd| {
                let u = unpack(&nd.f, h);
                let (r, k, g, e) = (u.r, u.k, u.g, u.e);
                let m = u.n - 1.0;
                let rho = u.q.max(0.0).powf(1.0 / (2.0 * rs));
                let pp = u.q.max(0.0).powf((1.0 - 2.0 * rs) / (2.0 * rs));
                let v0sq = u.v.iter().map(|x| x * x).sum::<f64>() + u.q;
                let mut lhs = 0.0;
                for c in 0..3 {
                    for d in 0..3 {
                        lhs += 2.0 * nd.eg(&e, c, d, d, c);
                        for ee in 0..3 {
                            lhs -= g[c][d][ee] * g[ee][d][c] + g[c][c][d] * g[ee][ee][d];
                        }
                    }
                }
                let tr_r = r[0][0] + r[1][1] + r[2][2];
                let rr: f64 = (0..3).flat_map(|c| (0..3).map(move |d| (c, d))).map(|(c, d)| r[c][d] * r[c][d]).sum();
                let gm = m - bs.tr_r;
                let rhs = rr - 2.0 * h * tr_r - gm * gm - 6.0 * h * gm + 2.0 * (1.0 + cs2) * pp * v0sq - 2.0 * cs2 * rho;
                let mut mom = [0.0; 3];
                for (i, mi) in mom.iter_mut().enumerate() {
                    let mut s = nd.ef(&e, i, M_ROW) + (1.0 + cs2) * pp * v0sq.sqrt() * u.v[i];
                    for c in 0..3 {
                        s += nd.ef(&e, c, r_row(c, i));
                        for d in 0..3 {
                            s += k[i][d] * g[c][d][c] - k[c][d] * g[c][i][d];
                        }
                    }
                    *mi = s;
                }
                [lhs - rhs, mom[0], mom[1], mom[2]]
            })
            .collect();
        let np = vals.len();
        let mut grid = Array2::zeros((4, np));
        for (p, v) in vals.iter().enumerate() {
            for j in 0..4 {
                grid[[j, p]] = v[j];
            }
        }
        let ham_max = grid.row(0).iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let mom_max = (1..4).flat_map(|j| grid.row(j).to_vec()).fold(0.0f64, |a, b| a.max(b.abs()));
        let c = self.sp.analyze_batch(grid.view());
        let fld = |j: usize| SpectralField { coeffs: c.row(j).to_owned() };
        Ok(ConstraintFields { hamiltonian: fld(0), momentum: [fld(1), fld(2), fld(3)], ham_max, mom_max })
    }

    /// n - 1 - (tr k~ - tr k) = m - tr R~ + tr R.
    pub fn gauge_residual(&self, state: &CoupledState) -> Result<SpectralField> {
        let bg = self.bg.state_at(state.t)?;
        let mut f = state.field(M_ROW);
        for i in 0..3 {
            f.coeffs = &f.coeffs + &state.coeffs.row(r_row(i, i));
        }
        f.coeffs[0] -= self.sp.constant(bg.tr_r()).coeffs[0];
        Ok(f)
    }

    /// gamma minus the Koszul connection of the evolved frame, on the grid.
    pub fn compatibility_residual(&self, state: &CoupledState) -> Result<f64> {
        let nodes = self.nodes(state.coeffs.view());
        let h = self.params.h;
        let mut worst = 0.0f64;
        for nd in &nodes {
            let u = unpack(&nd.f, h);
            let de: [Mat3; 3] = std::array::from_fn(|c| std::array::from_fn(|i| std::array::from_fn(|a| nd.dy[c][e_row(i, a)])));
            let kz = koszul_gamma(&u.e, &de).ok_or(Error::DegenerateFrame { t: state.t })?;
            for i in 0..3 {
                for j in 0..3 {
                    for b in 0..3 {
                        worst = worst.max((kz[i][j][b] - u.g[i][j][b]).abs());
                    }
                }
            }
        }
        Ok(worst)
    }

    /// Largest |e_I^i| over the grid, the inverse of the effective scale factor.
    pub fn frame_scale(&self, state: &CoupledState) -> f64 {
        let vals = self.sp.synthesize_batch(state.coeffs.slice(ndarray::s![15..24, ..]));
        vals.iter().fold(0.0f64, |a, b| a.max(b.abs()))
    }

    /// (advective, parabolic) time-step limits at this state.
    pub fn dt_limits(&self, state: &CoupledState, cfg: &StepperConfig) -> (f64, f64) {
        let l = self.sp.band_limit() as f64 + 1.0;
        let a_eff = 1.0 / self.frame_scale(state).max(1e-300);
        (cfg.cfl * a_eff / l, cfg.c_parab * (a_eff / l).powi(2))
    }

    fn check_state(&self, coeffs: &Array2<f64>, t: f64) -> Result<()> {
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::RegimeExit { t, what: "non-finite coefficient".into() });
        }
        let vals = self.sp.synthesize_batch(coeffs.view());
        for p in 0..self.sp.n_points() {
            let n = 1.0 + vals[[M_ROW, p]];
            if !(n > 0.0) {
                return Err(Error::RegimeExit { t, what: format!("lapse n = {n}") });
            }
            if !(vals[[Q_ROW, p]] > 0.0) {
                return Err(Error::RegimeExit { t, what: format!("rho^(2rs) = {}", vals[[Q_ROW, p]]) });
            }
            let e: Mat3 = std::array::from_fn(|i| std::array::from_fn(|a| vals[[e_row(i, a), p]]));
            let scale: f64 = e.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
            if det3(&e).abs() <= 1e-12 * scale.powi(3) {
                return Err(Error::DegenerateFrame { t });
            }
        }
        Ok(())
    }

    pub fn step_coupled(&self, state: &CoupledState, dt: f64, filter_strength: f64) -> Result<CoupledState> {
        let c = rk4_matrix(|t, c| self.rhs(t, c), state.t, &state.coeffs, dt)?;
        let mut next = CoupledState { t: state.t + dt, coeffs: c, constraint_solved: state.constraint_solved };
        apply_filter(self.sp, &mut next.coeffs, filter_strength * dt);
        self.check_state(&next.coeffs, next.t)?;
        Ok(next)
    }

    /// Fixed-step RK4 to cfg.t_end with a blow-up monitor on the coefficient norm.
    pub fn evolve<F>(&self, initial: &CoupledState, cfg: &StepperConfig, mut callback: F) -> Result<RunResult<CoupledState>>
    where
        F: FnMut(&CoupledState),
    {
        cfg.validate()?;
        if cfg.check_limits {
            let (adv, par) = self.dt_limits(initial, cfg);
            if cfg.dt > adv.min(par) {
                return Err(Error::Domain(format!(
                    "dt = {} exceeds the step limits (advective {adv:.3e}, parabolic {par:.3e})",
                    cfg.dt
                )));
            }
        }
        let norm0 = initial.coeffs.iter().map(|x| x * x).sum::<f64>().sqrt();
        let n_steps = ((cfg.t_end - initial.t) / cfg.dt).round() as usize;
        let mut state = initial.clone();
        let mut out = RunResult { snapshots: vec![state.clone()], failure: None };
        callback(&state);
        for i in 1..=n_steps {
            match self.step_coupled(&state, cfg.dt, cfg.filter_strength) {
                Ok(mut s) => {
                    s.t = initial.t + i as f64 * cfg.dt;
                    let norm = s.coeffs.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if norm > cfg.blowup * norm0 {
                        out.failure = Some(Error::Unstable { t: s.t, factor: norm / norm0 });
                        return Ok(out);
                    }
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

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialDataKind {
    HomogeneousConstraintSolved,
    InhomogeneousFree,
}

/// Connection of a homogeneous frame (no spatial derivatives) in reduced form.
fn homogeneous_gamma(s: &BackgroundReducedState) -> Result<Tensor3> {
    koszul_gamma(&s.frame(), &[[[0.0; 3]; 3]; 3]).ok_or(Error::DegenerateFrame { t: f64::NAN })
}

/// Homogeneous perturbation: every reduced variable is scaled by (1 + amplitude xi) with seeded
/// xi in [-1, 1], the connection is recomputed from the perturbed frame and the constraints are
/// re-solved. The lapse follows from the gauge relative to `bg`.
pub fn perturb_homogeneous(
    bg: &BackgroundReducedState,
    params: &SoundSpeedParams,
    amplitude: f64,
    seed: u64,
) -> Result<BackgroundReducedState> {
    if amplitude == 0.0 {
        return Ok(*bg);
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut y = bg.to_array();
    for v in y.iter_mut() {
        let xi: f64 = rng.random_range(-1.0..1.0);
        *v *= 1.0 + amplitude * xi;
    }
    let mut s = BackgroundReducedState::from_slice(&y);
    let g = homogeneous_gamma(&s)?;
    s.g221 = g[1][1][0];
    s.g123 = g[0][1][2];
    s.g231 = g[1][2][0];
    s.g312 = g[2][0][1];
    solve_constraints_at(&s, params)
}

/// Initial data at time t for the coupled system.
///
/// The inhomogeneous kind adds `amplitude e^{-w H t}` times unit-RMS random fields to R_IJ and e_I^i
/// (w = 1), v_I (w = 1, scaled by |v_1~|) and q (relative), then recomputes gamma from the frame
/// through the Koszul formula. The constraints are not solved; the lapse follows from the gauge.
pub fn build_initial_data<B: HomogeneousBackground>(
    sp: &S3Spectral,
    bg: &B,
    t: f64,
    kind: InitialDataKind,
    amplitude: f64,
    modes: &ModeSpec,
) -> Result<CoupledState> {
    let params = *bg.params();
    let b = bg.state_at(t)?;
    match kind {
        InitialDataKind::HomogeneousConstraintSolved => {
            let s = perturb_homogeneous(&b, &params, amplitude, modes.seed)?;
            Ok(CoupledState::from_homogeneous(sp, t, &s, &params, b.tr_r()))
        }
        InitialDataKind::InhomogeneousFree => {
            let mut st = CoupledState::from_homogeneous(sp, t, &b, &params, b.tr_r());
            if amplitude == 0.0 {
                return Ok(st);
            }
            let w1 = amplitude * (-params.h * t).exp();
            let mut stream = 0u64;
            let mut add = |row: usize, scale: f64, st: &mut CoupledState| {
                let f = sp.random_band_field(modes, stream);
                stream += 1;
                st.coeffs.row_mut(row).scaled_add(scale, &f.coeffs);
            };
            for i in 0..3 {
                for j in i..3 {
                    add(r_row(i, j), w1, &mut st);
                }
            }
            let e_scale = b.frame().iter().flatten().fold(0.0f64, |a, x| a.max(x.abs()));
            for i in 0..3 {
                for a in 0..3 {
                    add(e_row(i, a), w1 * e_scale, &mut st);
                }
            }
            for i in 0..3 {
                add(v_row(i), amplitude * b.v1.abs(), &mut st);
            }
            add(Q_ROW, amplitude * b.q(&params), &mut st);
            set_koszul_connection(sp, &mut st)?;
            // lapse from the gauge
            let mut m = Array1::zeros(sp.dim());
            m[0] = sp.constant(b.tr_r()).coeffs[0];
            for i in 0..3 {
                m = m - st.coeffs.row(r_row(i, i));
            }
            st.coeffs.row_mut(M_ROW).assign(&m);
            st.constraint_solved = false;
            let sys = CoupledSystem::new(sp, bg);
            sys.check_state(&st.coeffs, t)?;
            Ok(st)
        }
    }
}

/// Replace the connection rows by the Koszul connection of the frame rows.
pub fn set_koszul_connection(sp: &S3Spectral, st: &mut CoupledState) -> Result<()> {
    let rows = st.coeffs.slice(ndarray::s![15..24, ..]).to_owned();
    let vals = sp.synthesize_batch(rows.view());
    let d = [sp.synthesize_y_batch(1, rows.view()), sp.synthesize_y_batch(2, rows.view()), sp.synthesize_y_batch(3, rows.view())];
    let np = sp.n_points();
    let mut out = Array2::zeros((9, np));
    for p in 0..np {
        let e: Mat3 = std::array::from_fn(|i| std::array::from_fn(|a| vals[[3 * i + a, p]]));
        let de: [Mat3; 3] = std::array::from_fn(|c| std::array::from_fn(|i| std::array::from_fn(|a| d[c][[3 * i + a, p]])));
        let g = koszul_gamma(&e, &de).ok_or(Error::DegenerateFrame { t: st.t })?;
        for i in 0..3 {
            for (j, b) in [(0, 1), (0, 2), (1, 2)] {
                out[[gamma_row(i, j, b).unwrap().0 - 6, p]] = g[i][j][b];
            }
        }
    }
    let c = sp.analyze_batch(out.view());
    st.coeffs.slice_mut(ndarray::s![6..15, ..]).assign(&c);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::derive_params;

    #[test]
    fn layout() {
        assert_eq!(FIELD_NAMES[r_row(2, 1)], "R23");
        assert_eq!(FIELD_NAMES[gamma_row(1, 0, 2).unwrap().0], "g213");
        assert_eq!(gamma_row(1, 2, 0), Some((6 + 3 + 1, -1.0)));
        assert_eq!(FIELD_NAMES[e_row(2, 1)], "e32");
        assert_eq!(FIELD_NAMES[v_row(2)], "v3");
        assert_eq!(gamma_row(0, 1, 1), None);
    }

    #[test]
    fn koszul_isotropic() {
        let a = 0.3;
        let e = [[a, 0.0, 0.0], [0.0, a, 0.0], [0.0, 0.0, a]];
        let g = koszul_gamma(&e, &[[[0.0; 3]; 3]; 3]).unwrap();
        assert!((g[0][1][2] - a).abs() < 1e-15);
        assert!((g[1][2][0] - a).abs() < 1e-15);
        assert!((g[0][2][1] + a).abs() < 1e-15);
        assert_eq!(g[0][0][1], 0.0);
    }

    #[test]
    fn koszul_diagonal_matches_closed_form() {
        let gs = [1.0, 1.2, 0.8];
        let e = [[1.0 / gs[0], 0.0, 0.0], [0.0, 1.0 / gs[1], 0.0], [0.0, 0.0, 1.0 / gs[2]]];
        let g = koszul_gamma(&e, &[[[0.0; 3]; 3]; 3]).unwrap();
        let d = crate::background::AsymptoticData { k3: [0.0; 3], k3_23: 0.0, g_inf: gs, v1_inf: 0.0, p_inf: 0.0 };
        let c = d.gamma_inf();
        assert!((g[0][1][2] - c[0]).abs() < 1e-14);
        assert!((g[1][2][0] - c[1]).abs() < 1e-14);
        assert!((g[2][0][1] - c[2]).abs() < 1e-14);
    }

    #[test]
    fn fluid_forms_agree() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut r = || rng.random_range(-1.0..1.0);
        let g = FluidGeometry {
            n: 1.2,
            dn: [r(), r(), r()],
            k: {
                let a = [[r(), r(), r()], [0.0, r(), r()], [0.0, 0.0, r()]];
                std::array::from_fn(|i| std::array::from_fn(|j| if i <= j { a[i][j] } else { a[j][i] }))
            },
            gamma: {
                let a: Tensor3 = std::array::from_fn(|_| std::array::from_fn(|_| std::array::from_fn(|_| r())));
                std::array::from_fn(|i| std::array::from_fn(|j| std::array::from_fn(|b| a[i][j][b] - a[i][b][j])))
            },
        };
        let f = FluidPoint {
            v: [r(), r(), r()],
            q: 0.7,
            dv: std::array::from_fn(|_| std::array::from_fn(|_| r())),
            dq: [r(), r(), r()],
        };
        let rs = derive_params(0.4, 3.0).unwrap().rs;
        let (e0v, e0q) = fluid_e0(&g, &f, rs);
        let r = direct_fluid_residuals(&g, &f, rs, &e0v, e0q);
        for x in r {
            assert!(x.abs() < 1e-13, "{r:?}");
        }
    }
}
