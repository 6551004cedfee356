//! Spectral calculus on S^3 with the Killing frame Y_1, Y_2, Y_3.
//!
//! Points are written in Hopf angles,
//! z1 = x1 + i x2 = cos(eta) e^{i xi1},  z2 = x3 + i x4 = sin(eta) e^{i xi2},
//! with eta in (0, pi/2). Under q = z1 + z2 j the frame is left multiplication,
//! Y_1 q = i q, Y_2 q = k q, Y_3 q = j q, which matches the ambient formulas
//! (Y_1 x1 = -x2, Y_2 x1 = -x4, Y_3 x1 = -x3) and gives [Y_1, Y_2] = 2 Y_3.
//!
//! The basis is real and orthonormal on the unit sphere:
//! cos/sin(mu xi1 + nu xi2) cos^|mu|(eta) sin^|nu|(eta) P_n^{(|nu|,|mu|)}(cos 2 eta),
//! degree k = |mu| + |nu| + 2n. Each degree block spans the matrix elements of the
//! SU(2) representation with 2j = k (m = (mu+nu)/2, m' = (mu-nu)/2), so every Y_i
//! acts block-diagonally.
//!
//! Quadrature is a product rule: uniform in xi1, xi2 and Gauss-Legendre in
//! w = cos 2 eta. The default grid integrates polynomials of degree 3L exactly,
//! so products of two band-L fields are projected back without aliasing.

use std::f64::consts::PI;
use std::io::Write;
use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_BAND_LIMIT: usize = 32;

/// Volume of the unit three-sphere.
pub const VOLUME: f64 = 2.0 * PI * PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Const,
    Cos,
    Sin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisLabel {
    pub k: usize,
    pub mu: i32,
    pub nu: i32,
    pub n: usize,
    pub part: Part,
}

impl BasisLabel {
    pub fn two_j(&self) -> usize {
        self.k
    }
    pub fn two_m(&self) -> i32 {
        self.mu + self.nu
    }
    pub fn two_m_prime(&self) -> i32 {
        self.mu - self.nu
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub eta: f64,
    pub xi1: f64,
    pub xi2: f64,
}

impl Node {
    /// Ambient coordinates (x1, x2, x3, x4).
    pub fn x(&self) -> [f64; 4] {
        let (c, s) = (self.eta.cos(), self.eta.sin());
        [c * self.xi1.cos(), c * self.xi1.sin(), s * self.xi2.cos(), s * self.xi2.sin()]
    }
}

#[derive(Debug, Clone)]
pub struct CollocationGrid {
    pub band_limit: usize,
    /// Polynomial degree integrated exactly.
    pub exact_degree: usize,
    pub n_xi: usize,
    pub n_w: usize,
    pub nodes: Vec<Node>,
    pub weights: Vec<f64>,
}

impl CollocationGrid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    /// Values of ambient coordinate x_{a+1} at every node.
    pub fn coordinate(&self, a: usize) -> Vec<f64> {
        self.nodes.iter().map(|nd| nd.x()[a]).collect()
    }
}

pub fn build_grid(band_limit: usize) -> Result<CollocationGrid> {
    build_grid_exact(band_limit, 3 * band_limit, DEFAULT_MAX_BAND_LIMIT)
}

/// Product grid integrating every polynomial of degree `degree` exactly.
pub fn build_grid_exact(band_limit: usize, degree: usize, max_band_limit: usize) -> Result<CollocationGrid> {
    if band_limit > max_band_limit {
        return Err(Error::Resource { requested: band_limit, max: max_band_limit });
    }
    let degree = degree.max(2 * band_limit);
    let n_xi = degree + 1;
    // after the angular integrals only even powers of cos(eta), sin(eta) survive,
    // i.e. polynomials in w of degree floor(degree/2)
    let n_w = (degree / 2) / 2 + 1;
    let gl = GaussLegendre::new(NonZeroUsize::new(n_w).expect("n_w >= 1"));
    let h = 2.0 * PI / n_xi as f64;
    let mut nodes = Vec::with_capacity(n_w * n_xi * n_xi);
    let mut weights = Vec::with_capacity(n_w * n_xi * n_xi);
    for &(w, wgt) in gl.as_node_weight_pairs() {
        let eta = 0.5 * w.acos();
        for i1 in 0..n_xi {
            for i2 in 0..n_xi {
                nodes.push(Node { eta, xi1: h * i1 as f64, xi2: h * i2 as f64 });
                weights.push(0.25 * wgt * h * h);
            }
        }
    }
    Ok(CollocationGrid { band_limit, exact_degree: degree, n_xi, n_w, nodes, weights })
}

/// Jacobi polynomial P_n^{(a,b)}(x).
pub fn jacobi(n: usize, a: f64, b: f64, x: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let mut p0 = 1.0;
    let mut p1 = 0.5 * ((a - b) + (a + b + 2.0) * x);
    for m in 2..=n {
        let m = m as f64;
        let s = 2.0 * m + a + b;
        let a1 = 2.0 * m * (m + a + b) * (s - 2.0);
        let a2 = (s - 1.0) * (a * a - b * b);
        let a3 = (s - 2.0) * (s - 1.0) * s;
        let a4 = 2.0 * (m + a - 1.0) * (m + b - 1.0) * s;
        let p2 = ((a2 + a3 * x) * p1 - a4 * p0) / a1;
        p0 = p1;
        p1 = p2;
    }
    p1
}

/// d/dx P_n^{(a,b)}(x).
pub fn jacobi_deriv(n: usize, a: f64, b: f64, x: f64) -> f64 {
    if n == 0 {
        0.0
    } else {
        0.5 * (n as f64 + a + b + 1.0) * jacobi(n - 1, a + 1.0, b + 1.0, x)
    }
}

fn labels_up_to(band_limit: usize) -> Vec<BasisLabel> {
    let mut out = Vec::new();
    for k in 0..=band_limit {
        let ki = k as i32;
        for mu in -ki..=ki {
            for nu in -ki..=ki {
                let rest = ki - mu.abs() - nu.abs();
                if rest < 0 || rest % 2 != 0 {
                    continue;
                }
                let n = (rest / 2) as usize;
                if mu == 0 && nu == 0 {
                    out.push(BasisLabel { k, mu, nu, n, part: Part::Const });
                } else if mu > 0 || (mu == 0 && nu > 0) {
                    out.push(BasisLabel { k, mu, nu, n, part: Part::Cos });
                    out.push(BasisLabel { k, mu, nu, n, part: Part::Sin });
                }
            }
        }
    }
    out
}

/// Unnormalized value and the three frame derivatives of a basis function at a node.
fn eval_basis(label: &BasisLabel, node: &Node) -> (f64, [f64; 3]) {
    let (am, an) = (label.mu.unsigned_abs() as i32, label.nu.unsigned_abs() as i32);
    let (c, s) = (node.eta.cos(), node.eta.sin());
    let (t, ct) = (s / c, c / s);
    let w = (2.0 * node.eta).cos();
    let (ja, jb) = (an as f64, am as f64);
    let pj = jacobi(label.n, ja, jb, w);
    let dpj = jacobi_deriv(label.n, ja, jb, w);
    let pref = c.powi(am) * s.powi(an);
    let r = pref * pj;
    let dr = r * (-(am as f64) * t + (an as f64) * ct) + pref * dpj * (-4.0 * s * c);
    let (mu, nu) = (label.mu as f64, label.nu as f64);
    let phi = mu * node.xi1 + nu * node.xi2;
    let sig = node.xi1 + node.xi2;
    let (cphi, sphi) = (phi.cos(), phi.sin());
    let (csig, ssig) = (sig.cos(), sig.sin());
    let lin = r * (mu * t - nu * ct);
    // complex prefactors multiplying e^{i phi}
    let y1 = (0.0, (mu + nu) * r);
    let y3 = (csig * dr, ssig * lin);
    let y2 = (ssig * dr, -csig * lin);
    let pick = |z: (f64, f64)| -> f64 {
        let (re, im) = (z.0 * cphi - z.1 * sphi, z.0 * sphi + z.1 * cphi);
        match label.part {
            Part::Const | Part::Cos => re,
            Part::Sin => im,
        }
    };
    let val = match label.part {
        Part::Const | Part::Cos => r * cphi,
        Part::Sin => r * sphi,
    };
    (val, [pick(y1), pick(y2), pick(y3)])
}

/// Which harmonic degrees a random perturbation excites.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeSpec {
    pub degrees: Vec<usize>,
    pub seed: u64,
}

/// Band-limited scalar field stored as coefficients over the real orthonormal basis.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    pub coeffs: Array1<f64>,
}

impl SpectralField {
    pub fn zeros(dim: usize) -> Self {
        SpectralField { coeffs: Array1::zeros(dim) }
    }
}

/// Grid, basis, transforms and the frame derivative matrices for one band limit.
#[derive(Debug, Clone)]
pub struct S3Spectral {
    pub grid: CollocationGrid,
    pub labels: Vec<BasisLabel>,
    /// B x P, values = coeffs . synth_t
    synth_t: Array2<f64>,
    /// P x B, coeffs = values . analysis
    analysis: Array2<f64>,
    /// B x B, coefficients of Y_i f are D_i c
    d: [Array2<f64>; 3],
    /// B x P, values of Y_i f = coeffs . dsynth_t[i]
    dsynth_t: [Array2<f64>; 3],
}

impl S3Spectral {
    pub fn new(band_limit: usize) -> Result<Self> {
        Self::with_grid(build_grid(band_limit)?)
    }

    pub fn with_grid(grid: CollocationGrid) -> Result<Self> {
        let l = grid.band_limit;
        if grid.exact_degree < 2 * l {
            return Err(Error::Domain("grid must integrate degree 2L exactly".into()));
        }
        let labels = labels_up_to(l);
        let (np, nb) = (grid.len(), labels.len());
        let mut s = Array2::<f64>::zeros((np, nb));
        let mut ys = [Array2::<f64>::zeros((np, nb)), Array2::zeros((np, nb)), Array2::zeros((np, nb))];
        for (p, node) in grid.nodes.iter().enumerate() {
            for (b, lab) in labels.iter().enumerate() {
                let (v, dv) = eval_basis(lab, node);
                s[[p, b]] = v;
                for i in 0..3 {
                    ys[i][[p, b]] = dv[i];
                }
            }
        }
        for b in 0..nb {
            let norm2: f64 = (0..np).map(|p| grid.weights[p] * s[[p, b]] * s[[p, b]]).sum();
            let inv = 1.0 / norm2.sqrt();
            s.column_mut(b).mapv_inplace(|x| x * inv);
            for y in ys.iter_mut() {
                y.column_mut(b).mapv_inplace(|x| x * inv);
            }
        }
        let mut analysis = s.clone();
        for (p, mut row) in analysis.axis_iter_mut(Axis(0)).enumerate() {
            row.mapv_inplace(|x| x * grid.weights[p]);
        }
        let at = analysis.t();
        let d = [at.dot(&ys[0]), at.dot(&ys[1]), at.dot(&ys[2])];
        let synth_t = s.t().to_owned();
        let dsynth_t = [d[0].t().dot(&synth_t), d[1].t().dot(&synth_t), d[2].t().dot(&synth_t)];
        Ok(S3Spectral { grid, labels, synth_t, analysis, d, dsynth_t })
    }

    pub fn band_limit(&self) -> usize {
        self.grid.band_limit
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn n_points(&self) -> usize {
        self.grid.len()
    }

    pub fn derivative_matrix(&self, i: usize) -> Result<&Array2<f64>> {
        check_index(i)?;
        Ok(&self.d[i - 1])
    }

    pub fn analyze(&self, values: &[f64]) -> Result<SpectralField> {
        if values.len() != self.n_points() {
            return Err(Error::Dimension { expected: self.n_points(), got: values.len() });
        }
        let v = ndarray::ArrayView1::from(values);
        Ok(SpectralField { coeffs: v.dot(&self.analysis) })
    }

    pub fn synthesize(&self, f: &SpectralField) -> Result<Vec<f64>> {
        self.check(f)?;
        Ok(f.coeffs.dot(&self.synth_t).to_vec())
    }

    /// Rows are fields: (F x B) -> (F x P).
    pub fn synthesize_batch(&self, coeffs: ArrayView2<f64>) -> Array2<f64> {
        coeffs.dot(&self.synth_t)
    }

    /// Values of Y_i applied to every row, i in 1..=3.
    pub fn synthesize_y_batch(&self, i: usize, coeffs: ArrayView2<f64>) -> Array2<f64> {
        coeffs.dot(&self.dsynth_t[i - 1])
    }

    /// Rows are fields: (F x P) -> (F x B).
    pub fn analyze_batch(&self, values: ArrayView2<f64>) -> Array2<f64> {
        values.dot(&self.analysis)
    }

    /// Coefficients of Y_i applied to every row.
    pub fn apply_y_batch(&self, i: usize, coeffs: ArrayView2<f64>) -> Array2<f64> {
        coeffs.dot(&self.d[i - 1].t())
    }

    pub fn apply_y(&self, i: usize, f: &SpectralField) -> Result<SpectralField> {
        check_index(i)?;
        self.check(f)?;
        Ok(SpectralField { coeffs: self.d[i - 1].dot(&f.coeffs) })
    }

    /// Coefficient vector of the constant function c.
    pub fn constant(&self, c: f64) -> SpectralField {
        let mut f = SpectralField::zeros(self.dim());
        f.coeffs[0] = c * VOLUME.sqrt();
        f
    }

    /// Mean value over the sphere.
    pub fn mean(&self, f: &SpectralField) -> f64 {
        f.coeffs[0] / VOLUME.sqrt()
    }

    pub fn l2_norm(&self, f: &SpectralField) -> f64 {
        f.coeffs.dot(&f.coeffs).sqrt()
    }

    /// Sum over all multi-indices |iota| <= m of ||Y^iota f||^2, by repeated differentiation.
    pub fn sobolev_norm_sq(&self, f: &SpectralField, m: usize) -> f64 {
        self.sobolev_orders_sq(f, m).iter().sum()
    }

    pub fn sobolev_norm(&self, f: &SpectralField, m: usize) -> f64 {
        self.sobolev_norm_sq(f, m).sqrt()
    }

    /// Top-order part only: sum over |iota| = m.
    pub fn homogeneous_norm_sq(&self, f: &SpectralField, m: usize) -> f64 {
        self.sobolev_orders_sq(f, m)[m]
    }

    /// Entry j is the sum over |iota| = j of ||Y^iota f||^2, for j = 0..=m.
    pub fn sobolev_orders_sq(&self, f: &SpectralField, m: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(m + 1);
        let mut level = vec![f.coeffs.clone()];
        out.push(f.coeffs.dot(&f.coeffs));
        for _ in 0..m {
            let mut next = Vec::with_capacity(level.len() * 3);
            for g in &level {
                for d in &self.d {
                    next.push(d.dot(g));
                }
            }
            out.push(next.iter().map(|g| g.dot(g)).sum());
            level = next;
        }
        out
    }

    /// ||sum_i Y_i Y_i f + k(k+2) f|| / ||f||.
    pub fn casimir_check(&self, f: &SpectralField, k: usize) -> f64 {
        let mut acc = f.coeffs.mapv(|c| c * (k * (k + 2)) as f64);
        for d in &self.d {
            acc = acc + d.dot(&d.dot(&f.coeffs));
        }
        let nf = self.l2_norm(f);
        if nf == 0.0 { 0.0 } else { acc.dot(&acc).sqrt() / nf }
    }

    /// Keep only the degree-k block.
    pub fn project_degree(&self, f: &SpectralField, k: usize) -> SpectralField {
        let mut g = f.clone();
        for (c, lab) in g.coeffs.iter_mut().zip(&self.labels) {
            if lab.k != k {
                *c = 0.0;
            }
        }
        g
    }

    /// Exponential filter sigma(k) = exp(-strength ((k - k_c)/(L - k_c))^8) on the top third.
    pub fn filter_factors(&self, strength: f64) -> Vec<f64> {
        let l = self.band_limit() as f64;
        let kc = 2.0 * l / 3.0;
        self.labels
            .iter()
            .map(|lab| {
                let k = lab.k as f64;
                if k <= kc || l <= kc {
                    1.0
                } else {
                    (-strength * ((k - kc) / (l - kc)).powi(8)).exp()
                }
            })
            .collect()
    }

    /// Seeded random combination of the degrees in `spec`, scaled to unit RMS over
    /// the sphere. Distinct `stream` values give independent fields for one seed.
    pub fn random_band_field(&self, spec: &ModeSpec, stream: u64) -> SpectralField {
        use rand::{RngExt, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(spec.seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut f = SpectralField::zeros(self.dim());
        for (c, lab) in f.coeffs.iter_mut().zip(&self.labels) {
            let x: f64 = rng.random_range(-1.0..1.0);
            if spec.degrees.contains(&lab.k) {
                *c = x;
            }
        }
        let norm = self.l2_norm(&f);
        if norm > 0.0 {
            f.coeffs.mapv_inplace(|c| c * VOLUME.sqrt() / norm);
        }
        f
    }

    fn check(&self, f: &SpectralField) -> Result<()> {
        if f.coeffs.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: f.coeffs.len() });
        }
        Ok(())
    }

    /// CSV snapshot: one row per coefficient with its representation labels.
    pub fn write_snapshot_csv<W: Write>(&self, f: &SpectralField, out: W) -> Result<()> {
        #[derive(Serialize)]
        struct Row {
            index: usize,
            k: usize,
            two_j: usize,
            two_m: i32,
            two_m_prime: i32,
            mu: i32,
            nu: i32,
            n: usize,
            part: Part,
            coeff: f64,
        }
        self.check(f)?;
        let mut w = csv::Writer::from_writer(out);
        for (index, (lab, &coeff)) in self.labels.iter().zip(f.coeffs.iter()).enumerate() {
            w.serialize(Row {
                index,
                k: lab.k,
                two_j: lab.two_j(),
                two_m: lab.two_m(),
                two_m_prime: lab.two_m_prime(),
                mu: lab.mu,
                nu: lab.nu,
                n: lab.n,
                part: lab.part,
                coeff,
            })
            .map_err(|e| Error::Domain(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::Domain(e.to_string()))?;
        Ok(())
    }
}

fn check_index(i: usize) -> Result<()> {
    if (1..=3).contains(&i) { Ok(()) } else { Err(Error::FrameIndex(i)) }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimensions() {
        for l in 0..6 {
            let n: usize = (0..=l).map(|k| (k + 1) * (k + 1)).sum();
            assert_eq!(labels_up_to(l).len(), n);
        }
    }

    #[test]
    fn volume() {
        for l in 0..5 {
            let g = build_grid(l).unwrap();
            let vol: f64 = g.weights.iter().sum();
            assert!((vol - VOLUME).abs() < 1e-12 * VOLUME);
        }
        assert_eq!(build_grid(0).unwrap().len(), 1);
    }

    #[test]
    fn resource_limit() {
        assert!(matches!(build_grid(33), Err(Error::Resource { .. })));
    }

    #[test]
    fn jacobi_low_orders() {
        // P_1^{(a,b)}(x) = (a+1) + (a+b+2)(x-1)/2
        let (a, b, x) = (1.0, 2.0, 0.3);
        assert!((jacobi(1, a, b, x) - ((a + 1.0) + (a + b + 2.0) * (x - 1.0) / 2.0)).abs() < 1e-15);
        // Legendre P_2
        assert!((jacobi(2, 0.0, 0.0, x) - 0.5 * (3.0 * x * x - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn orthonormal() {
        let sp = S3Spectral::new(3).unwrap();
        let s = sp.synth_t.t();
        let b = sp.dim();
        for i in 0..b {
            for j in 0..b {
                let v: f64 = (0..sp.n_points()).map(|p| sp.grid.weights[p] * s[[p, i]] * s[[p, j]]).sum();
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((v - e).abs() < 1e-12, "{i} {j} {v}");
            }
        }
    }

    #[test]
    fn y1_on_x1() {
        let sp = S3Spectral::new(2).unwrap();
        let x1 = sp.analyze(&sp.grid.coordinate(0)).unwrap();
        let y = sp.synthesize(&sp.apply_y(1, &x1).unwrap()).unwrap();
        let x2 = sp.grid.coordinate(1);
        for (a, b) in y.iter().zip(&x2) {
            assert!((a + b).abs() < 1e-12);
        }
    }

    #[test]
    fn bad_index() {
        let sp = S3Spectral::new(1).unwrap();
        let f = sp.constant(1.0);
        assert!(matches!(sp.apply_y(0, &f), Err(Error::FrameIndex(0))));
        assert!(matches!(sp.apply_y(4, &f), Err(Error::FrameIndex(4))));
        assert!(sp.analyze(&[1.0, 2.0]).is_err());
    }
}
