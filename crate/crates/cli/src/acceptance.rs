//! The acceptance suite: one graded line per criterion, built from the shipped presets.

use std::fmt;
use std::time::Instant;

use ndarray::Array1;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tilt_core::background::rhs_background;
use tilt_core::einstein_euler::{
    CoupledState, CoupledSystem, FluidGeometry, FluidPoint, N_COUPLED, Q_ROW, Tensor3, direct_fluid_residuals, fluid_e0,
};
use tilt_core::params::a_s_from_rs;
use tilt_core::s3_frame::{S3Spectral, SpectralField};
use tilt_core::derive_params;

use crate::config::preset;
use crate::error::CliError;
use crate::scenarios::{Check, ScenarioOutcome, coupled_background, run_scenario};

/// Sub-checks that fail for documented reasons and are printed but not asserted by the test target.
pub const DOCUMENTED_FAILURES: [(u8, &str); 4] = [
    (6, "tilt_indicator_drift"),
    (8, "energy_growth"),
    (8, "constraint_growth"),
    (8, "gauge_dt4_scaling"),
];

pub fn is_documented_failure(id: u8, check: &str) -> bool {
    DOCUMENTED_FAILURES.iter().any(|(i, n)| *i == id && check.ends_with(n))
}

#[derive(Debug, Clone)]
pub struct CriterionLine {
    pub id: u8,
    pub title: &'static str,
    /// Criterion 10 is report-only.
    pub gating: bool,
    pub checks: Vec<Check>,
    pub runtime_s: f64,
}

impl CriterionLine {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed || !c.gating)
    }

    /// Failing gating checks that are not in [`DOCUMENTED_FAILURES`].
    pub fn unexpected_failures(&self) -> Vec<&Check> {
        self.checks
            .iter()
            .filter(|c| c.gating && !c.passed && !is_documented_failure(self.id, &c.name))
            .collect()
    }
}

impl fmt::Display for CriterionLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if !self.gating {
            "INFO"
        } else if self.passed() {
            "PASS"
        } else {
            "FAIL"
        };
        write!(f, "criterion {:>2} {status} [{:.1}s] {}:", self.id, self.runtime_s, self.title)?;
        for (i, c) in self.checks.iter().enumerate() {
            let mark = match (c.gating, c.passed) {
                (false, _) => "info",
                (true, true) => "ok",
                (true, false) if is_documented_failure(self.id, &c.name) => "FAIL(documented)",
                (true, false) => "FAIL",
            };
            let sep = if i == 0 { " " } else { "; " };
            if c.relation == "report" || c.relation == "error" {
                write!(f, "{sep}{} = {:.4e} [{mark}] ({})", c.name, c.value, c.detail)?;
            } else {
                write!(f, "{sep}{} = {:.4e} {} {:.1e} [{mark}]", c.name, c.value, c.relation, c.threshold)?;
            }
        }
        Ok(())
    }
}

pub const TITLES: [&str; 10] = [
    "parameter algebra",
    "S3 frame calculus",
    "background vacuum oracle",
    "background tilted run",
    "homogeneous Euler on FLRW oracle",
    "inhomogeneous Euler on FLRW",
    "coupled homogeneous perturbation",
    "coupled inhomogeneous free run",
    "formulation equivalence",
    "top-order probe (report only)",
];

const RUNTIME_LIMITS: [f64; 10] = [1.0, 30.0, 5.0, 10.0, 10.0, 600.0, 300.0, 900.0, 30.0, f64::INFINITY];

fn prefixed(prefix: &str, checks: &[Check]) -> Vec<Check> {
    checks
        .iter()
        .map(|c| {
            let mut c = c.clone();
            c.name = format!("{prefix}{}", c.name);
            c
        })
        .collect()
}

fn run_preset(name: &str, cs2: Option<f64>) -> Result<ScenarioOutcome, CliError> {
    let out = run_scenario(&preset(name, cs2)?)?;
    Ok(out)
}

fn outcome_checks(prefix: &str, out: Result<ScenarioOutcome, CliError>) -> Vec<Check> {
    match out {
        Ok(o) => {
            let mut v = prefixed(prefix, &o.checks);
            if let Some(f) = o.failure {
                v.push(Check::error(&format!("{prefix}run"), f));
            }
            v
        }
        Err(e) => vec![Check::error(&format!("{prefix}run"), e.to_string())],
    }
}

pub fn run_criterion(id: u8) -> CriterionLine {
    let start = Instant::now();
    let mut checks = match id {
        1 => parameter_algebra(),
        2 => frame_calculus(),
        3 => outcome_checks("", run_preset("vacuum", None)),
        4 => outcome_checks("", run_preset("tilted", None)),
        5 => [0.36, 0.5, 0.8]
            .iter()
            .flat_map(|c| outcome_checks(&format!("cs2={c} "), run_preset("euler-homogeneous", Some(*c))))
            .collect(),
        6 => [0.36, 0.5, 0.8]
            .iter()
            .flat_map(|c| outcome_checks(&format!("cs2={c} "), run_preset("euler-inhomogeneous", Some(*c))))
            .collect(),
        7 => outcome_checks("", run_preset("coupled-homogeneous", None)),
        8 => outcome_checks("", run_preset("coupled-free", None)),
        9 => formulation_equivalence().unwrap_or_else(|e| vec![Check::error("run", e.to_string())]),
        10 => top_order_survey(),
        _ => vec![Check::error("criterion", format!("no criterion {id}"))],
    };
    let runtime_s = start.elapsed().as_secs_f64();
    let limit = RUNTIME_LIMITS[(id as usize).clamp(1, 10) - 1];
    if limit.is_finite() {
        checks.push(Check::at_most("runtime_s", runtime_s, limit, "wall time"));
    }
    CriterionLine { id, title: TITLES[(id as usize).clamp(1, 10) - 1], gating: id != 10, checks, runtime_s }
}

pub fn run_all() -> Vec<CriterionLine> {
    (1..=10).map(run_criterion).collect()
}

fn parameter_algebra() -> Vec<Check> {
    let p = derive_params(3.0 / 7.0, 3.0).expect("valid sound speed");
    let err = (p.rs - 0.3).abs().max((p.a_s - 0.5).abs());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let cs2: f64 = rng.random_range(0.01..0.99);
        let p = derive_params(cs2, 3.0).expect("valid sound speed");
        // relative to max(1, |A_s|): A_s grows like 2/(1 - cs2) near cs2 = 1
        worst = worst.max((p.a_s - a_s_from_rs(p.rs)).abs() / p.a_s.abs().max(1.0));
    }
    vec![
        Check::at_most("restricted_endpoint", err, 1e-14, "(r_s, A_s) at cs2 = 3/7"),
        Check::at_most("a_s_identity", worst, 1e-13, "A_s = -1 + 2 r_s/(1 - 2 r_s) over 1000 cs2, relative to max(1, |A_s|)"),
    ]
}

fn random_field(sp: &S3Spectral, rng: &mut ChaCha8Rng) -> SpectralField {
    SpectralField { coeffs: Array1::from_iter((0..sp.dim()).map(|_| rng.random_range(-1.0..1.0))) }
}

fn levi_civita(i: usize, j: usize, l: usize) -> f64 {
    match (i, j, l) {
        (1, 2, 3) | (2, 3, 1) | (3, 1, 2) => 1.0,
        (2, 1, 3) | (3, 2, 1) | (1, 3, 2) => -1.0,
        _ => 0.0,
    }
}

fn frame_calculus() -> Vec<Check> {
    let sp = match S3Spectral::new(8) {
        Ok(sp) => sp,
        Err(e) => return vec![Check::error("setup", e.to_string())],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let y = |i: usize, f: &SpectralField| sp.apply_y(i, f).expect("dimension matches");
    let (mut comm, mut skew) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let f = random_field(&sp, &mut rng);
        let g = random_field(&sp, &mut rng);
        let yf: Vec<SpectralField> = (1..=3).map(|i| y(i, &f)).collect();
        for i in 1..=3 {
            for j in 1..=3 {
                if i == j {
                    continue;
                }
                let mut d = &y(i, &yf[j - 1]).coeffs - &y(j, &yf[i - 1]).coeffs;
                for l in 1..=3 {
                    d.scaled_add(-2.0 * levi_civita(i, j, l), &yf[l - 1].coeffs);
                }
                comm = comm.max(d.dot(&d).sqrt() / sp.l2_norm(&f));
            }
            let a = yf[i - 1].coeffs.dot(&g.coeffs) + f.coeffs.dot(&y(i, &g).coeffs);
            skew = skew.max(a.abs() / (f.coeffs.dot(&f.coeffs) * g.coeffs.dot(&g.coeffs)).sqrt());
        }
    }
    let mut cas = 0.0f64;
    for k in 0..=6 {
        let f = sp.project_degree(&random_field(&sp, &mut rng), k);
        cas = cas.max(sp.casimir_check(&f, k));
    }
    vec![
        Check::at_most("commutator_residual", comm, 1e-10, "100 random fields at L = 8"),
        Check::at_most("casimir_residual", cas, 1e-10, "eigenvalue -k(k+2), k <= 6"),
        Check::at_most("skew_adjointness", skew, 1e-10, "<Y_i f, g> + <f, Y_i g>"),
    ]
}

fn formulation_equivalence() -> Result<Vec<Check>, CliError> {
    let p = derive_params(0.4, 3.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let mut r = || rng.random_range(-1.0..1.0);
        let a: [[f64; 3]; 3] = std::array::from_fn(|_| std::array::from_fn(|_| r()));
        let raw: Tensor3 = std::array::from_fn(|_| std::array::from_fn(|_| std::array::from_fn(|_| r())));
        let g = FluidGeometry {
            n: 1.0 + 0.5 * r(),
            dn: [r(), r(), r()],
            k: std::array::from_fn(|i| std::array::from_fn(|j| a[i.min(j)][i.max(j)])),
            // connection coefficients are antisymmetric in their last two indices
            gamma: std::array::from_fn(|i| std::array::from_fn(|j| std::array::from_fn(|b| raw[i][j][b] - raw[i][b][j]))),
        };
        let f = FluidPoint {
            v: [r(), r(), r()],
            q: 0.55 + 0.45 * r(),
            dv: std::array::from_fn(|_| std::array::from_fn(|_| r())),
            dq: [r(), r(), r()],
        };
        let (e0v, e0q) = fluid_e0(&g, &f, p.rs);
        for x in direct_fluid_residuals(&g, &f, p.rs, &e0v, e0q) {
            worst = worst.max(x.abs());
        }
    }

    let cfg = preset("coupled-free", None)?;
    let tr = coupled_background(&cfg, &p)?;
    let sp = S3Spectral::new(2)?;
    let sys = CoupledSystem::new(&sp, &tr);
    let c0 = sp.constant(1.0).coeffs[0];
    let mut rhs_diff = 0.0f64;
    for t in [3.0, 5.0, 7.0] {
        let b = tr.state_at(t)?;
        let st = CoupledState::from_homogeneous(&sp, t, &b, &p, b.tr_r());
        let d = sys.rhs(t, st.coeffs.view())?;
        let db = rhs_background(t, &b, &p)?;
        let mut expect = CoupledState::from_homogeneous(&sp, t, &db, &p, db.tr_r()).coeffs;
        // q = p^{2 cs2/(1 - cs2)} with p = rho^{1 - 2 r_s}
        expect[[Q_ROW, 0]] = p.p_to_q_power() * b.q(&p) / b.p * db.p * c0;
        for f in 0..N_COUPLED {
            for (i, x) in d.row(f).iter().enumerate() {
                rhs_diff = rhs_diff.max((x - expect[[f, i]]).abs());
            }
        }
    }
    Ok(vec![
        Check::at_most("fluid_form_residual", worst, 1e-11, "eliminated against direct form, 100 random states"),
        Check::at_most("zero_perturbation_rhs", rhs_diff, 1e-12, "coupled rhs of the background against the ODE rhs"),
    ])
}

fn top_order_survey() -> Vec<Check> {
    let mut out = Vec::new();
    for cs2 in [0.5, 0.6] {
        for l in [3, 4] {
            let label = format!("cs2={cs2} L={l} top_order_probe");
            let res = preset("top-order", Some(cs2)).and_then(|mut c| {
                c.band_limit = l;
                run_scenario(&c)
            });
            match res {
                Ok(o) => match (o.check("top_order_probe"), o.failure.clone()) {
                    (_, Some(f)) => out.push(Check::error(&label, f)),
                    (Some(c), None) => {
                        let mut c = c.clone();
                        c.name = label;
                        c.gating = false;
                        out.push(c);
                    }
                    (None, None) => out.push(Check::error(&label, "probe missing")),
                },
                Err(e) => out.push(Check::error(&label, e.to_string())),
            }
        }
    }
    for c in out.iter_mut() {
        c.gating = false;
    }
    out
}
